use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn attmot(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_attmot")).args(args).current_dir(cwd).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

const SMALL: &str = "version = 1\nsequences = 2\nseed = 4\n[world]\nn_frames = 40\nn_identities = 5\n[world.embedding]\ndim = 16\n";

fn files(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn small_bench(dir: &Path) {
    fs::write(dir.join("w.toml"), SMALL).unwrap();
    let o = attmot(&["generate", "-c", "w.toml", "-o", "bench"], dir);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn generate_is_deterministic() {
    let t = tempfile::tempdir().unwrap();
    fs::write(t.path().join("w.toml"), SMALL).unwrap();
    assert_eq!(code(&attmot(&["generate", "-c", "w.toml", "-o", "a"], t.path())), 0);
    assert_eq!(code(&attmot(&["generate", "-c", "w.toml", "-o", "b"], t.path())), 0);
    let a = files(&t.path().join("a"));
    assert_eq!(a, files(&t.path().join("b")));
    let seqs = fs::read_dir(t.path().join("a")).unwrap().filter(|e| e.as_ref().unwrap().path().is_dir()).count();
    assert_eq!(seqs, 2);
}

#[test]
fn invalid_world_writes_nothing() {
    let t = tempfile::tempdir().unwrap();
    fs::write(t.path().join("w.toml"), "version = 1\n[world]\nn_frames = 0\n").unwrap();
    let o = attmot(&["generate", "-c", "w.toml", "-o", "bench"], t.path());
    assert_eq!(code(&o), 1);
    assert!(!t.path().join("bench").exists());
}

#[test]
fn track_and_eval_are_reproducible() {
    let t = tempfile::tempdir().unwrap();
    small_bench(t.path());
    for run in ["r1", "r2"] {
        let o = attmot(&["track", "-b", "bench", "--mode", "embed+attr", "-o", run, "--jobs", "2"], t.path());
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let csv = format!("{run}.csv");
        assert_eq!(code(&attmot(&["eval", "--gt", "bench", "--res", run, "-o", &csv], t.path())), 0);
    }
    assert_eq!(files(&t.path().join("r1")), files(&t.path().join("r2")));
    let report = fs::read_to_string(t.path().join("r1.csv")).unwrap();
    assert_eq!(report, fs::read_to_string(t.path().join("r2.csv")).unwrap());
    assert!(report.starts_with("sequence,MOTA,FN,FP,IDSW,HOTA,AssA,IDR,IDP,IDF1,DetA,GT,PRED"));
    assert!(report.contains("AGGREGATE"));
}

#[test]
fn train_then_track_with_predicted_attributes() {
    let t = tempfile::tempdir().unwrap();
    small_bench(t.path());
    fs::write(t.path().join("t.toml"), "version = 1\niterations = 30\n").unwrap();
    let o = attmot(&["train", "-b", "bench", "-c", "t.toml", "--seed", "2", "-o", "p.json", "--trace", "loss.csv"], t.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read_to_string(t.path().join("loss.csv")).unwrap().lines().count(), 31);
    let o = attmot(&["track", "-b", "bench", "--mode", "attr", "--attr-source", "predicted", "--params", "p.json", "-o", "r"], t.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn predicted_attributes_need_params() {
    let t = tempfile::tempdir().unwrap();
    small_bench(t.path());
    let o = attmot(&["track", "-b", "bench", "--attr-source", "predicted", "-o", "r"], t.path());
    assert_eq!(code(&o), 1);
}

#[test]
fn missing_benchmark_is_a_runtime_failure() {
    let t = tempfile::tempdir().unwrap();
    assert_eq!(code(&attmot(&["track", "-b", "nowhere", "-o", "r"], t.path())), 2);
}

#[test]
fn config_needs_version_header() {
    let t = tempfile::tempdir().unwrap();
    small_bench(t.path());
    fs::write(t.path().join("a.toml"), "mode = \"iou\"\n").unwrap();
    let o = attmot(&["track", "-b", "bench", "-c", "a.toml", "-o", "r"], t.path());
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("version"));
}

#[test]
fn usage_errors_exit_one() {
    let t = tempfile::tempdir().unwrap();
    assert_eq!(code(&attmot(&["generate"], t.path())), 1);
    assert_eq!(code(&attmot(&["frobnicate"], t.path())), 1);
    assert_eq!(code(&attmot(&["--help"], t.path())), 0);
}

#[test]
fn help_lists_defaults() {
    let t = tempfile::tempdir().unwrap();
    let help = String::from_utf8(attmot(&["track", "--help"], t.path()).stdout).unwrap();
    assert!(help.contains("gallery_budget = 30"));
    assert!(help.contains("embed+attr: "));
    let help = String::from_utf8(attmot(&["train", "--help"], t.path()).stdout).unwrap();
    assert!(help.contains("iterations = 2400"));
}

#[test]
fn ablate_rejects_empty_variant_list() {
    let t = tempfile::tempdir().unwrap();
    fs::write(t.path().join("s.toml"), "version = 1\nseeds = [0]\n[generate]\nsequences = 1\n").unwrap();
    let o = attmot(&["ablate", "-s", "s.toml", "-o", "out"], t.path());
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("no variants"));
}

#[test]
fn ablate_writes_matrix_and_runs() {
    let t = tempfile::tempdir().unwrap();
    small_bench(t.path());
    let spec = "version = 1\nbenchmark = \"bench\"\nseeds = [0, 1]\n\
                [[variants]]\nname = \"embed\"\n[variants.assoc]\nmode = \"embed\"\n\
                [[variants]]\nname = \"embed+attr\"\n[variants.assoc]\nmode = \"embed+attr\"\n";
    fs::write(t.path().join("s.toml"), spec).unwrap();
    let o = attmot(&["ablate", "-s", "s.toml", "-o", "out"], t.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let matrix = fs::read_to_string(t.path().join("out/ablation.csv")).unwrap();
    assert_eq!(matrix.lines().count(), 3);
    assert!(t.path().join("out/runs/embed+attr/seed-1.csv").is_file());
}

#[test]
fn verify_passes() {
    let t = tempfile::tempdir().unwrap();
    let o = attmot(&["verify"], t.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    assert_eq!(String::from_utf8_lossy(&o.stdout).lines().filter(|l| l.starts_with("PASS")).count(), 7);
}
