use std::fs;
use std::path::Path;

const EXPORTED: [&str; 17] = [
    "dal_version",
    "dal_last_error",
    "dal_config_load",
    "dal_config_parse",
    "dal_config_free",
    "dal_run",
    "dal_run_free",
    "dal_run_is_complete",
    "dal_run_count",
    "dal_run_name",
    "dal_run_auc",
    "dal_score_random",
    "dal_score_lc",
    "dal_score_max_entropy",
    "dal_score_mnlp",
    "dal_score_bald",
    "dal_select_batch",
];

#[test]
fn header_declares_the_interface() {
    let header = fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/dal.h")).unwrap();
    assert!(header.contains("#ifndef DAL_H"));
    for name in EXPORTED.iter().chain(&["dal_span_f1", "dal_curve_auc"]) {
        assert!(header.contains(&format!("{name}(")), "missing {name}");
    }
    for item in ["typedef struct DalConfig DalConfig", "typedef struct DalRun DalRun", "DAL_STATUS_OK = 0", "DAL_STATUS_PANIC = 10", "double f1;"] {
        assert!(header.contains(item), "missing `{item}`");
    }
}
