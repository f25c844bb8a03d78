from evalkit.metrics import (RATIOS, REPORT_ROLES, EvalReport, RoleScores, build_report, clus_acc, clus_loc_acc,
                             cluster_accuracy, contingency, hungarian, iou, loc_acc, match_clusters)
