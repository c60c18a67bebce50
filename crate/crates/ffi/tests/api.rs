use std::ffi::{CStr, CString};
use std::ptr;

use dal_ffi::*;

fn last_error() -> String {
    let p = dal_last_error();
    assert!(!p.is_null(), "expected an error message");
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(dal_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn least_confidence_over_flat_rows() {
    let probs = [0.5, 0.5, 0.9, 0.1, 0.2, 0.8];
    let mut out = [0.0; 3];
    assert_eq!(unsafe { dal_score_lc(probs.as_ptr(), 3, 2, out.as_mut_ptr()) }, DalStatus::Ok);
    for (got, want) in out.iter().zip([0.5, 0.1, 0.2]) {
        assert!((got - want).abs() < 1e-12);
    }
    assert!(dal_last_error().is_null());
}

#[test]
fn entropy_of_uniform_rows() {
    let probs = [0.25; 8];
    let mut out = [0.0; 2];
    assert_eq!(unsafe { dal_score_max_entropy(probs.as_ptr(), 2, 4, out.as_mut_ptr()) }, DalStatus::Ok);
    assert!(out.iter().all(|&h| (h - 4f64.ln()).abs() < 1e-12));
}

#[test]
fn mnlp_uses_sequence_lengths() {
    // Sequence 0 has two tokens, sequence 1 has one.
    let probs = [0.9, 0.1, 0.6, 0.4, 0.5, 0.5];
    let lengths = [2usize, 1];
    let mut out = [0.0; 2];
    assert_eq!(unsafe { dal_score_mnlp(probs.as_ptr(), lengths.as_ptr(), 2, 2, out.as_mut_ptr()) }, DalStatus::Ok);
    assert!((out[0] - -(0.9f64.ln() + 0.6f64.ln()) / 2.0).abs() < 1e-12);
    assert!((out[1] - 2f64.ln()).abs() < 1e-12);
}

#[test]
fn bald_vote_split_six_three_one() {
    let mut probs = Vec::new();
    for t in 0..10 {
        let winner = if t < 6 { 0 } else if t < 9 { 1 } else { 2 };
        probs.extend((0..3).map(|k| if k == winner { 0.8 } else { 0.1 }));
    }
    let (mut score, mut tie) = ([0.0], [0.0]);
    let status = unsafe { dal_score_bald(probs.as_ptr(), 10, ptr::null(), 1, 3, score.as_mut_ptr(), tie.as_mut_ptr()) };
    assert_eq!(status, DalStatus::Ok);
    assert!((score[0] - 0.4).abs() < 1e-12);
    // Modal class 0 has probability 0.8 in six passes and 0.1 in four.
    assert!((tie[0] - (6.0 * 0.8 + 4.0 * 0.1) / 10.0).abs() < 1e-12);
}

#[test]
fn bald_over_sequences_counts_whole_sequences() {
    // Two passes, one sequence of two tokens; the passes disagree on token 1.
    let probs = [0.9, 0.1, 0.7, 0.3, 0.9, 0.1, 0.3, 0.7];
    let lengths = [2usize];
    let mut score = [0.0];
    let status = unsafe { dal_score_bald(probs.as_ptr(), 2, lengths.as_ptr(), 1, 2, score.as_mut_ptr(), ptr::null_mut()) };
    assert_eq!(status, DalStatus::Ok);
    assert!((score[0] - 0.5).abs() < 1e-12);
}

#[test]
fn select_batch_follows_the_ranking_chain() {
    let scores = [0.5, 0.9, 0.5, 0.5];
    let tiebreaks = [0.3, 0.0, 0.1, 0.1];
    let mut picked = [usize::MAX; 4];
    let mut count = 0;
    let status = unsafe { dal_select_batch(scores.as_ptr(), tiebreaks.as_ptr(), ptr::null(), 4, 3, picked.as_mut_ptr(), &mut count) };
    assert_eq!(status, DalStatus::Ok);
    assert_eq!(&picked[..count], &[1, 2, 3]);
}

#[test]
fn select_batch_includes_the_crossing_example() {
    let scores = [3.0, 2.0, 1.0];
    let costs = [4usize, 5, 6];
    let mut picked = [0; 3];
    let mut count = 0;
    let status = unsafe { dal_select_batch(scores.as_ptr(), ptr::null(), costs.as_ptr(), 3, 6, picked.as_mut_ptr(), &mut count) };
    assert_eq!(status, DalStatus::Ok);
    assert_eq!(&picked[..count], &[0, 1]);
}

#[test]
fn random_scores_are_a_permutation() {
    let mut a = [0.0; 50];
    let mut b = [0.0; 50];
    unsafe {
        assert_eq!(dal_score_random(50, 9, a.as_mut_ptr()), DalStatus::Ok);
        assert_eq!(dal_score_random(50, 9, b.as_mut_ptr()), DalStatus::Ok);
    }
    assert_eq!(a, b);
    let mut sorted = a.to_vec();
    sorted.sort_by(f64::total_cmp);
    assert!(sorted.iter().enumerate().all(|(i, &v)| v == i as f64));
}

#[test]
fn span_f1_over_text_corpus() {
    let pred = CString::new("B-PER I-PER O\nB-LOC O O\n").unwrap();
    let gold = CString::new("B-PER I-PER O\nO B-LOC O\n").unwrap();
    let mut out = DalSpanScores { precision: 0.0, recall: 0.0, f1: 0.0 };
    assert_eq!(unsafe { dal_span_f1(pred.as_ptr(), gold.as_ptr(), &mut out) }, DalStatus::Ok);
    assert_eq!((out.precision, out.recall, out.f1), (0.5, 0.5, 0.5));
}

#[test]
fn curve_auc_of_a_line() {
    let xs = [0.0, 0.5, 1.0];
    let ys = [0.0, 0.5, 1.0];
    let mut auc = 0.0;
    assert_eq!(unsafe { dal_curve_auc(xs.as_ptr(), ys.as_ptr(), 3, &mut auc) }, DalStatus::Ok);
    assert!((auc - 0.5).abs() < 1e-12);
}

#[test]
fn errors_set_status_and_message() {
    let mut out = [0.0; 1];
    assert_eq!(unsafe { dal_score_lc(ptr::null(), 1, 2, out.as_mut_ptr()) }, DalStatus::NullPointer);
    assert!(last_error().contains("probs"));

    let bad = [0.7, 0.7];
    assert_eq!(unsafe { dal_score_lc(bad.as_ptr(), 1, 2, out.as_mut_ptr()) }, DalStatus::InvalidArgument);

    let single = [0.5, 0.5];
    assert_eq!(unsafe { dal_score_bald(single.as_ptr(), 1, ptr::null(), 1, 2, out.as_mut_ptr(), ptr::null_mut()) }, DalStatus::InvalidArgument);
    assert!(last_error().contains("two passes"));

    let one = [1.0, 0.0];
    let mut auc = 0.0;
    assert_eq!(unsafe { dal_curve_auc(one.as_ptr(), one.as_ptr(), 1, &mut auc) }, DalStatus::InvalidArgument);

    let mut picked = [0; 2];
    let mut count = 7;
    let zero = [0usize, 1];
    assert_eq!(unsafe { dal_select_batch(bad.as_ptr(), ptr::null(), zero.as_ptr(), 2, 1, picked.as_mut_ptr(), &mut count) }, DalStatus::InvalidArgument);
    assert_eq!(count, 0);

    assert_eq!(unsafe { dal_score_lc(one.as_ptr(), 1, 2, out.as_mut_ptr()) }, DalStatus::Ok);
    assert!(dal_last_error().is_null());
}

#[test]
fn config_errors_are_classified() {
    let mut cfg = ptr::null_mut();
    let text = CString::new("[experiment]\nnam = 1\n").unwrap();
    assert_eq!(unsafe { dal_config_parse(text.as_ptr(), &mut cfg) }, DalStatus::Config);
    assert!(cfg.is_null());
    let missing = CString::new("/nonexistent/dal.toml").unwrap();
    assert_eq!(unsafe { dal_config_load(missing.as_ptr(), &mut cfg) }, DalStatus::Io);
    assert!(last_error().contains("nonexistent"));
    unsafe {
        dal_config_free(ptr::null_mut());
        dal_run_free(ptr::null_mut());
    }
}

const SMALL: &str = r#"
[experiment]
name = "ffi"
seeds = [1]
stop = 0.06

[data.source]
kind = "synthetic-classification"
[data.source.spec]
num_examples = 200
num_classes = 3
vocab_size = 60
signal_strength = 0.5
seed = 4

[model]
architecture = "avg-embed-mlp"

[matrix]
acquisition = ["random", "lc"]
"#;

#[test]
fn run_through_handles() {
    let dir = tempfile::tempdir().unwrap();
    let text = CString::new(SMALL).unwrap();
    let out = CString::new(dir.path().to_str().unwrap()).unwrap();
    let mut cfg = ptr::null_mut();
    let mut run = ptr::null_mut();
    unsafe {
        assert_eq!(dal_config_parse(text.as_ptr(), &mut cfg), DalStatus::Ok);
        assert_eq!(dal_run(cfg, out.as_ptr(), 1, &mut run), DalStatus::Ok, "{}", last_error());
        let mut complete = false;
        assert_eq!(dal_run_is_complete(run, &mut complete), DalStatus::Ok);
        assert!(complete);
        let mut n = 0;
        assert_eq!(dal_run_count(run, &mut n), DalStatus::Ok);
        assert_eq!(n, 2);
        let names: Vec<String> = (0..n).map(|i| CStr::from_ptr(dal_run_name(run, i)).to_string_lossy().into_owned()).collect();
        assert_eq!(names, ["random", "lc"]);
        assert!(dal_run_name(run, n).is_null());
        for i in 0..n {
            let mut auc = f64::NAN;
            assert_eq!(dal_run_auc(run, i, &mut auc), DalStatus::Ok);
            assert!((0.0..=1.0).contains(&auc));
        }
        let mut auc = 0.0;
        assert_eq!(dal_run_auc(run, n, &mut auc), DalStatus::InvalidArgument);
        dal_run_free(run);
        dal_config_free(cfg);
    }
    assert!(dir.path().join("manifest.json").is_file());
    assert!(dir.path().join("lc").join("rounds.csv").is_file());
}
