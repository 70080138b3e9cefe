#!/usr/bin/env python3
"""Convert the KDD Cup 1999 10% file (kddcup.data_10_percent, headerless,
41 features + label) to a headered CSV for the dataset manifests.

Usage: kdd_to_csv.py kddcup.data_10_percent data/kddcup.csv
"""
import csv
import gzip
import sys

COLUMNS = [
    "duration", "protocol_type", "service", "flag", "src_bytes", "dst_bytes",
    "land", "wrong_fragment", "urgent", "hot", "num_failed_logins",
    "logged_in", "num_compromised", "root_shell", "su_attempted", "num_root",
    "num_file_creations", "num_shells", "num_access_files",
    "num_outbound_cmds", "is_host_login", "is_guest_login", "count",
    "srv_count", "serror_rate", "srv_serror_rate", "rerror_rate",
    "srv_rerror_rate", "same_srv_rate", "diff_srv_rate", "srv_diff_host_rate",
    "dst_host_count", "dst_host_srv_count", "dst_host_same_srv_rate",
    "dst_host_diff_srv_rate", "dst_host_same_src_port_rate",
    "dst_host_srv_diff_host_rate", "dst_host_serror_rate",
    "dst_host_srv_serror_rate", "dst_host_rerror_rate",
    "dst_host_srv_rerror_rate", "label",
]


def main() -> None:
    if len(sys.argv) != 3:
        sys.exit(__doc__)
    src = sys.argv[1]
    opener = gzip.open if src.endswith(".gz") else open
    n = 0
    with opener(src, "rt") as fin, open(sys.argv[2], "w", newline="") as fout:
        w = csv.writer(fout)
        w.writerow(COLUMNS)
        for line in fin:
            line = line.strip().rstrip(",")
            if not line:
                continue
            w.writerow(line.split(","))
            n += 1
    print(f"wrote {n} rows")


if __name__ == "__main__":
    main()
