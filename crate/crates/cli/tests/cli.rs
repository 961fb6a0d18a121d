use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use isslstm::data::{load_dir, NormStats, Split};
use isslstm::lstm::{init_params_scaled, Architecture, NetworkParams};
use isslstm::training::TrainConfig;
use isslstm_cli::checkpoint::{Checkpoint, Provenance, FORMAT_VERSION};
use isslstm_cli::commands::{certify, evaluate, simulate, SimulateArgs};
use isslstm_cli::config::{InitConfig, RunConfig};
use isslstm_cli::{exit, CliError};
use tempfile::TempDir;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_isslstm"))
        .args(args)
        .env("ISSLSTM_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn short_benchmark(dir: &Path, seed: u64) -> isslstm::data::Dataset {
    simulate(&SimulateArgs {
        out: dir.to_path_buf(),
        seed,
        params: None,
        signals: None,
        duration_h: Some(2.0),
        noise_sigma: 0.1,
    })
    .unwrap()
}

fn provenance() -> Provenance {
    Provenance { seed: 0, timestamp: 0, iterations_run: 0, stop_reason: None, best_val_mse: None }
}

/// Statistics under which normalisation is the identity.
fn unit_norm(n_u: usize, n_y: usize) -> NormStats {
    NormStats {
        u_min: vec![-1.0; n_u],
        u_max: vec![1.0; n_u],
        y_min: vec![-1.0; n_y],
        y_max: vec![1.0; n_y],
        u_constant: vec![false; n_u],
        y_constant: vec![false; n_y],
    }
}

fn checkpoint(params: NetworkParams) -> Checkpoint {
    let arch = params.architecture();
    let norm = unit_norm(arch.n_u, arch.n_y);
    Checkpoint::new(params, norm, TrainConfig::protocol(1e-3, 0), InitConfig { scale: 1.0 }, provenance()).unwrap()
}

fn write_ckpt(dir: &Path, name: &str, c: &Checkpoint) -> PathBuf {
    let p = dir.join(name);
    c.save(&p).unwrap();
    p
}

#[test]
fn simulate_writes_twelve_sequences_and_manifest() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("bench");
    let o = bin(&["simulate", "--seed", "3", "--duration-h", "2", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csvs = fs::read_dir(&out).unwrap().filter(|e| e.as_ref().unwrap().file_name() != "manifest.csv").count();
    assert_eq!(csvs, 12);
    let ds = load_dir(&out).unwrap();
    assert_eq!(ds.sequences.len(), 12);
    assert!(ds.sequences.iter().all(|s| s.len() == 240));
    assert_eq!((ds.of_split(Split::Train).len(), ds.of_split(Split::Val).len(), ds.of_split(Split::Test).len()), (9, 2, 1));
}

#[test]
fn same_seed_gives_identical_files() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    short_benchmark(&a, 11);
    short_benchmark(&b, 11);
    let mut names: Vec<_> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 13);
    for n in names {
        assert_eq!(fs::read(a.join(&n)).unwrap(), fs::read(b.join(&n)).unwrap(), "{n:?}");
    }
}

#[test]
fn signals_flag_keeps_one_kind() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("prbs");
    let o = bin(&["simulate", "--signals", "prbs", "--duration-h", "2", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let ds = load_dir(&out).unwrap();
    assert_eq!(ds.sequences.len(), 3);
    assert!(ds.sequences.iter().all(|s| s.id.starts_with("prbs")));
    assert_eq!(bin(&["simulate", "--signals", "sine", "--out", out.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn zero_network_certifies_at_one_half() {
    let tmp = TempDir::new().unwrap();
    let arch = Architecture::new(7, vec![16, 16], 12).unwrap();
    let ckpt = checkpoint(NetworkParams::zeros(&arch).unwrap());
    let cert = certify(&ckpt).unwrap();
    assert!(cert.verdict);
    for l in &cert.layers {
        assert_eq!(l.condition_value, 0.5);
        assert_eq!(l.margin, -0.5);
    }
    let path = write_ckpt(tmp.path(), "zero.json", &ckpt);
    let toml_out = tmp.path().join("cert.toml");
    let o = bin(&["check-iss", "--ckpt", path.to_str().unwrap(), "--out", toml_out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(exit::OK));
    assert!(stdout(&o).contains("verdict: PASS"));
    assert!(fs::read_to_string(toml_out).unwrap().contains("condition_value = 0.5"));
}

#[test]
fn violating_network_fails_check_iss() {
    let tmp = TempDir::new().unwrap();
    let mut np = NetworkParams::zeros(&Architecture::new(1, vec![1], 1).unwrap()).unwrap();
    np.layers[0].cell.r[(0, 0)] = 1.2;
    let ckpt = checkpoint(np);
    let cert = certify(&ckpt).unwrap();
    assert!(!cert.verdict);
    assert!((cert.layers[0].margin - 0.1).abs() < 1e-15);
    assert!(cert.layers[0].rho_bar.is_none());
    let path = write_ckpt(tmp.path(), "bad.json", &ckpt);
    let o = bin(&["check-iss", "--ckpt", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(exit::ASSERTION));
    assert!(stdout(&o).contains("verdict: FAIL"));
}

#[test]
fn gradcheck_passes() {
    let o = bin(&["gradcheck", "--trials", "1"]);
    assert_eq!(o.status.code(), Some(exit::OK), "{}", stdout(&o));
    assert!(stdout(&o).contains("PASS"));
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let tmp = TempDir::new().unwrap();
    let arch = Architecture::new(7, vec![5, 4], 12).unwrap();
    let ckpt = checkpoint(init_params_scaled(&arch, 9, 0.7).unwrap());
    let path = write_ckpt(tmp.path(), "c.json", &ckpt);
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back, ckpt);
    let bits = |c: &Checkpoint| c.params.flatten().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&back), bits(&ckpt));
    assert_eq!(back.to_json(), fs::read_to_string(&path).unwrap());
}

#[test]
fn rejects_other_format_versions() {
    let tmp = TempDir::new().unwrap();
    let arch = Architecture::new(1, vec![2], 1).unwrap();
    let json = checkpoint(NetworkParams::zeros(&arch).unwrap()).to_json();
    let path = tmp.path().join("v2.json");
    let old = format!("\"format_version\": {FORMAT_VERSION}");
    fs::write(&path, json.replacen(&old, "\"format_version\": 2", 1)).unwrap();
    let err = Checkpoint::load(&path).unwrap_err();
    assert!(matches!(err, CliError::Parse { .. }), "{err}");
    assert!(err.to_string().contains("version 2"));
    assert_eq!(bin(&["check-iss", "--ckpt", path.to_str().unwrap()]).status.code(), Some(exit::PARSE));
}

#[test]
fn rejects_corrupt_checkpoints() {
    let tmp = TempDir::new().unwrap();
    let arch = Architecture::new(2, vec![2], 1).unwrap();
    let json = checkpoint(init_params_scaled(&arch, 1, 1.0).unwrap()).to_json();
    let path = tmp.path().join("c.json");

    fs::write(&path, &json[..json.len() / 2]).unwrap();
    assert!(matches!(Checkpoint::load(&path), Err(CliError::Parse { .. })));

    // a tampered weight no longer matches the stored certificate
    let mut v: serde_json::Value = serde_json::from_str(&json).unwrap();
    v["params"]["layers"][0]["cell"]["r"]["data"][0] = serde_json::json!(5.0);
    fs::write(&path, v.to_string()).unwrap();
    let err = Checkpoint::load(&path).unwrap_err();
    assert!(err.to_string().contains("stability report"), "{err}");

    assert!(matches!(Checkpoint::load(&tmp.path().join("missing.json")), Err(CliError::Io { .. })));
    assert_eq!(bin(&["check-iss", "--ckpt", "/nonexistent/c.json"]).status.code(), Some(exit::IO));
}

#[test]
fn eval_reports_one_fit_per_output() {
    let tmp = TempDir::new().unwrap();
    let ds = short_benchmark(tmp.path(), 2);
    let arch = Architecture::new(7, vec![4], 12).unwrap();
    let mut ckpt = checkpoint(init_params_scaled(&arch, 0, 0.5).unwrap());
    ckpt.norm = ds.norm.clone();
    let report = evaluate(&ckpt, &ds, Split::Test).unwrap();
    assert_eq!(report.fits.len(), 12);
    assert_eq!(report.fits.iter().map(|r| r.output).collect::<Vec<_>>(), (1..=12).collect::<Vec<_>>());
    assert!(report.fits.iter().all(|r| r.fit.is_finite() && r.fit <= 1.0));
    assert_eq!(evaluate(&ckpt, &ds, Split::Val).unwrap().fits.len(), 24);
}

#[test]
fn train_eval_and_certify_end_to_end() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("bench");
    short_benchmark(&data, 4);
    let cfg_text = include_str!("../../../configs/desk.toml")
        .replace("hidden = [16, 16]", "hidden = [3]")
        .replace("kappa_max = 2500", "kappa_max = 50")
        .replace("kappa_val = 25", "kappa_val = 10");
    let cfg_path = tmp.path().join("small.toml");
    fs::write(&cfg_path, &cfg_text).unwrap();
    let ckpt = tmp.path().join("small.json");
    let o = bin(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--config",
        cfg_path.to_str().unwrap(),
        "--out",
        ckpt.to_str().unwrap(),
        "--threads",
        "1",
    ]);
    assert_eq!(o.status.code(), Some(exit::OK), "{}", String::from_utf8_lossy(&o.stderr));
    let history = fs::read_to_string(tmp.path().join("small.history.csv")).unwrap();
    assert!(history.starts_with("iteration,train_loss,val_mse,cond_1"));
    assert_eq!(history.lines().count(), 6);

    let loaded = Checkpoint::load(&ckpt).unwrap();
    assert_eq!(loaded.train_config, RunConfig::parse(&cfg_text, Path::new("x")).unwrap().training);
    assert!(loaded.iss.verdict);

    let report = tmp.path().join("eval.json");
    let o = bin(&["eval", "--ckpt", ckpt.to_str().unwrap(), "--data", data.to_str().unwrap(), "--out", report.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(exit::OK));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(report).unwrap()).unwrap();
    assert_eq!(json["fits"].as_array().unwrap().len(), 12);
    assert_eq!(json["split"], "test");
}

#[test]
fn bad_inputs_map_to_exit_codes() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "[architecture]\nn_u = 7\n").unwrap();
    let data = tmp.path().join("bench");
    short_benchmark(&data, 0);
    let run = |cfg: &Path, data: &Path| {
        bin(&["train", "--data", data.to_str().unwrap(), "--config", cfg.to_str().unwrap(), "--out", "/tmp/unused.json"])
            .status
            .code()
    };
    assert_eq!(run(&cfg, &data), Some(exit::PARSE));
    assert_eq!(run(&tmp.path().join("absent.toml"), &data), Some(exit::IO));

    // a large initialisation violates the condition at the only check
    let never = include_str!("../../../configs/desk.toml")
        .replace("hidden = [16, 16]", "hidden = [2]")
        .replace("scale = 0.1", "scale = 20.0")
        .replace("kappa_max = 2500", "kappa_max = 10")
        .replace("kappa_val = 25", "kappa_val = 10");
    fs::write(&cfg, never).unwrap();
    assert_eq!(run(&cfg, &data), Some(exit::NO_STABLE_CHECKPOINT));

    fs::write(data.join("manifest.csv"), "id,split\n").unwrap();
    fs::write(&cfg, include_str!("../../../configs/desk.toml")).unwrap();
    assert_eq!(run(&cfg, &data), Some(exit::PARSE));
    assert_eq!(bin(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn reference_configuration_size() {
    let cfg = RunConfig::parse(include_str!("../../../configs/reference.toml"), Path::new("r")).unwrap();
    assert_eq!(cfg.architecture().param_count(), 78468);
    let desk = RunConfig::parse(include_str!("../../../configs/desk.toml"), Path::new("d")).unwrap();
    assert_eq!(desk.architecture().param_count(), 4 * (16 * (7 + 16 + 1)) + 4 * (16 * (16 + 16 + 1)) + 12 * 17);
}
