use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tda_core::io::{decode_tensor, encode_tensor, load_model, read_dataset, save_model, write_dataset, Dtype};
use tda_core::nn::{build_type, TrainedModel};
use tda_core::tensor::Tensor3;

const BIN: &str = env!("CARGO_BIN_EXE_tda");

fn tda(args: &[&str], threads: Option<&str>) -> Output {
    let mut c = Command::new(BIN);
    c.args(args);
    match threads {
        Some(t) => c.env("TDA_THREADS", t),
        None => c.env_remove("TDA_THREADS"),
    };
    c.output().unwrap()
}

fn ok(o: &Output) {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
}

fn small_plate(dir: &Path, name: &str, material: &str, velocity: f64, network: &str, seed: u64) -> PathBuf {
    let p = dir.join(format!("{name}.cfg"));
    fs::write(
        &p,
        format!(
            "material = {material}\nvelocity = {velocity}\nattenuation = 0.003\nnetwork = {network}\nseed = {seed}\n\
             n_samples = 200\nrepeats = 3\ncopies = 1\n"
        ),
    )
    .unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn bundle_bytes_round_trip() {
    let t = Tensor3::from_vec((2, 3, 4), (0..24).map(|v| v as f64 * 0.125 - 1.0).collect()).unwrap();
    for dtype in [Dtype::F32, Dtype::F64] {
        let bytes = encode_tensor(&t, dtype).unwrap();
        let back = decode_tensor(&bytes).unwrap();
        assert_eq!(back, t);
        assert_eq!(encode_tensor(&back, dtype).unwrap(), bytes);
    }
}

#[test]
fn checkpoint_file_round_trip() {
    let d = tempfile::tempdir().unwrap();
    let m = TrainedModel::init(build_type(2, (7, 80)).unwrap(), 5);
    let (p1, p2) = (d.path().join("a.ugwc"), d.path().join("b.ugwc"));
    save_model(&p1, &m).unwrap();
    save_model(&p2, &load_model(&p1).unwrap()).unwrap();
    assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
}

#[test]
fn synth_writes_a_readable_dataset() {
    let d = tempfile::tempdir().unwrap();
    let cfg = small_plate(d.path(), "alu", "alu", 5.0, "circular", 1);
    let out = d.path().join("alu");
    let o = tda(&["synth", "--config", s(&cfg), "--out", s(&out)], None);
    ok(&o);
    let ds = read_dataset(&out).unwrap();
    assert_eq!(ds.len(), 16);
    assert_eq!(ds.material, "alu");
    // rewriting the loaded dataset reproduces the files byte for byte
    let again = d.path().join("again");
    write_dataset(&again, &ds).unwrap();
    for f in ["manifest.txt", "images.ugwt", "labels.csv"] {
        assert_eq!(fs::read(out.join(f)).unwrap(), fs::read(again.join(f)).unwrap(), "{f}");
    }
    // the same command again is byte-identical
    let out2 = d.path().join("alu2");
    ok(&tda(&["synth", "--config", s(&cfg), "--out", s(&out2)], None));
    assert_eq!(fs::read(out.join("images.ugwt")).unwrap(), fs::read(out2.join("images.ugwt")).unwrap());
}

#[test]
fn exit_codes() {
    let d = tempfile::tempdir().unwrap();
    let bad = d.path().join("bad.cfg");
    fs::write(&bad, "material = alu\nvelocity = 5\nnetwork = hexagonal\n").unwrap();
    let o = tda(&["synth", "--config", s(&bad), "--out", s(&d.path().join("x"))], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("network"));

    let missing = d.path().join("nowhere");
    let o = tda(&["metrics", s(&missing), s(&missing)], None);
    assert_eq!(o.status.code(), Some(2));

    let cfg = small_plate(d.path(), "p", "alu", 5.0, "circular", 1);
    let o = tda(&["synth", "--config", s(&cfg), "--out", s(&d.path().join("y"))], Some("zero"));
    assert_eq!(o.status.code(), Some(2));

    // a shorter acquisition window gives narrower images
    let a = d.path().join("a");
    let b = d.path().join("b");
    ok(&tda(&["synth", "--config", s(&cfg), "--out", s(&a)], None));
    let short = small_plate(d.path(), "r", "cfrp", 3.5, "rectangular", 2);
    fs::write(&short, fs::read_to_string(&short).unwrap().replace("n_samples = 200", "n_samples = 180")).unwrap();
    ok(&tda(&["synth", "--config", s(&short), "--out", s(&b)], None));
    let o = tda(&["mpca", s(&a), s(&b), "--q", "99", "--out", s(&d.path().join("m"))], None);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn mpca_command_is_monotone_and_reconstructs() {
    let d = tempfile::tempdir().unwrap();
    let a = d.path().join("a");
    let b = d.path().join("b");
    ok(&tda(&["synth", "--config", s(&small_plate(d.path(), "a", "alu", 5.0, "circular", 1)), "--out", s(&a)], None));
    ok(&tda(&["synth", "--config", s(&small_plate(d.path(), "b", "cfrp", 3.5, "circular", 2)), "--out", s(&b)], None));

    let p2_at = |q: &str| {
        let out = d.path().join(format!("m{q}"));
        ok(&tda(&["mpca", s(&a), s(&b), "--q", q, "--out", s(&out)], None));
        read_dataset(&out.join("source")).unwrap().image_dims().1
    };
    let (p97, p99) = (p2_at("97"), p2_at("99"));
    assert!(p97 <= p99, "{p97} > {p99}");

    let full = d.path().join("full");
    ok(&tda(&["mpca", s(&a), s(&b), "--q", "100", "--out", s(&full)], None));
    let o = tda(
        &["eval", "--data", s(&full.join("source")), "--basis", s(&full.join("basis")), "--original", s(&a)],
        None,
    );
    ok(&o);
    let text = String::from_utf8(o.stdout).unwrap();
    let err: f64 = text.lines().nth(1).unwrap().parse().unwrap();
    // the projected dataset is stored as f32, so this is a single-precision bound
    assert!(err < 1e-5, "{err}");

    let o = tda(&["metrics", s(&a), s(&b)], None);
    ok(&o);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.starts_with("kl_t_s,kl_s_t"));
}

#[test]
fn train_finetune_eval_chain() {
    let d = tempfile::tempdir().unwrap();
    let a = d.path().join("a");
    ok(&tda(&["synth", "--config", s(&small_plate(d.path(), "a", "alu", 5.0, "circular", 1)), "--out", s(&a)], None));
    let tc = d.path().join("train.cfg");
    fs::write(&tc, "max_epochs = 1\nbatch_size = 4\n").unwrap();
    let mut models = Vec::new();
    for axis in ["x", "y"] {
        let m = d.path().join(format!("{axis}.ugwc"));
        ok(&tda(
            &["train", "--data", s(&a), "--axis", axis, "--type", "1", "--config", s(&tc), "--seed", "3", "--paper-split", "--out", s(&m)],
            None,
        ));
        let f = d.path().join(format!("{axis}-ft.ugwc"));
        ok(&tda(
            &["finetune", "--model", s(&m), "--data", s(&a), "--axis", axis, "--config", s(&tc), "--paper-split", "--out", s(&f)],
            None,
        ));
        models.push(f);
    }
    let o = tda(&["eval", "--data", s(&a), "--model-x", s(&models[0]), "--model-y", s(&models[1])], None);
    ok(&o);
    let text = String::from_utf8(o.stdout).unwrap();
    let row: Vec<f64> = text.lines().nth(1).unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(row[0], 16.0);
    assert!(row[1].is_finite() && row[2].is_finite());
}

#[test]
fn thread_cap_does_not_change_reports() {
    let d = tempfile::tempdir().unwrap();
    let a = d.path().join("a");
    let b = d.path().join("b");
    ok(&tda(&["synth", "--config", s(&small_plate(d.path(), "a", "alu", 5.0, "circular", 1)), "--out", s(&a)], None));
    let mut bcfg = fs::read_to_string(small_plate(d.path(), "b", "cfrp", 3.5, "circular", 2)).unwrap();
    bcfg = bcfg.replace("copies = 1", "copies = 2");
    fs::write(d.path().join("b.cfg"), bcfg).unwrap();
    ok(&tda(&["synth", "--config", s(&d.path().join("b.cfg")), "--out", s(&b)], None));
    let run = d.path().join("run.cfg");
    fs::write(
        &run,
        "source = a\ntarget = b\nseed = 5\ncopies = 2\ntrain_max_epochs = 2\nfinetune_max_epochs = 2\n",
    )
    .unwrap();
    let mut outputs = Vec::new();
    for t in ["1", "8"] {
        let out = d.path().join(format!("out{t}"));
        let o = tda(&["run", "--config", s(&run), "--out", s(&out)], Some(t));
        ok(&o);
        assert!(String::from_utf8_lossy(&o.stdout).contains("MPCA-FT"));
        outputs.push(out);
    }
    for f in ["report.csv", "predictions.csv", "report.txt"] {
        assert_eq!(fs::read(outputs[0].join(f)).unwrap(), fs::read(outputs[1].join(f)).unwrap(), "{f}");
    }
}
