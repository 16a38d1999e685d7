use std::path::Path;
use std::time::{Duration, Instant};

use clap::Parser;
use tempfile::TempDir;

use crate::{run, Cli, CliError};

const TINY: &str = "phantom.width = 16\nphantom.height = 16\nphantom.depth = 9\ngeometry.views = 6\n\
train.iterations = 4\ntrain.hidden = 4\ntrain.emb_dim = 4\ntrain.volumes = 2\ntrain.crop = 8\nrecon.nfe = 4\n";

struct Sandbox {
    dir: TempDir,
}

impl Sandbox {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("tiny.cfg"), TINY).unwrap();
        Sandbox { dir }
    }

    fn path(&self, name: &str) -> String {
        self.dir.path().join(name).to_string_lossy().into_owned()
    }

    fn write(&self, name: &str, body: &str) {
        std::fs::write(self.dir.path().join(name), body).unwrap();
    }

    fn read(&self, name: &str) -> Vec<u8> {
        std::fs::read(self.dir.path().join(name)).unwrap()
    }

    fn exists(&self, name: &str) -> bool {
        Path::new(&self.path(name)).is_file()
    }

    /// Runs the command line with `{name}` tokens replaced by sandbox paths.
    fn invoke(&self, args: &[&str], fault: bool) -> (Result<(), CliError>, String) {
        let args: Vec<String> = std::iter::once("diffblend".to_string())
            .chain(args.iter().map(|a| match a.strip_prefix('{').and_then(|a| a.strip_suffix('}')) {
                Some(name) => self.path(name),
                None => a.to_string(),
            }))
            .collect();
        let cli = Cli::try_parse_from(&args).expect("arguments parse");
        let mut out = Vec::new();
        let r = run(cli, &mut out, fault);
        (r, String::from_utf8(out).unwrap())
    }

    fn ok(&self, args: &[&str]) -> String {
        let (r, stdout) = self.invoke(args, false);
        if let Err(e) = r {
            panic!("{args:?}: {e}");
        }
        stdout
    }

    fn fails(&self, args: &[&str]) -> CliError {
        self.invoke(args, false).0.expect_err("command fails")
    }
}

fn checksum<'a>(stdout: &'a str, file: &str) -> &'a str {
    stdout
        .lines()
        .find(|l| l.starts_with("sha256 ") && l.ends_with(file))
        .and_then(|l| l.split_whitespace().nth(1))
        .unwrap_or_else(|| panic!("no checksum for {file} in {stdout}"))
}

#[test]
fn unknown_config_key_exits_2_and_names_it() {
    let s = Sandbox::new();
    s.write("bad.cfg", "phantom.width = 8\nrecon.etta = 0.5\n");
    let e = s.fails(&["--config", "{bad.cfg}", "phantom", "--out", "{p.bvol}"]);
    assert_eq!(e.exit_code(), 2);
    assert!(e.to_string().contains("recon.etta"));
    assert!(!s.exists("p.bvol"));
}

#[test]
fn bad_override_exits_2() {
    let s = Sandbox::new();
    let e = s.fails(&["--set", "recon.eta", "phantom", "--out", "{p.bvol}"]);
    assert_eq!(e.exit_code(), 2);
    let e = s.fails(&["--set", "recon.eta=fast", "phantom", "--out", "{p.bvol}"]);
    assert_eq!(e.exit_code(), 2);
}

#[test]
fn missing_input_exits_2() {
    let s = Sandbox::new();
    let e = s.fails(&["eval", "--input", "{nope.bvol}", "--reference", "{nope.bvol}", "--out", "{m.csv}"]);
    assert_eq!(e.exit_code(), 2);
}

#[test]
fn config_is_echoed() {
    let s = Sandbox::new();
    let stdout = s.ok(&["--config", "{tiny.cfg}", "--seed", "5", "phantom", "--out", "{p.bvol}"]);
    assert!(stdout.contains("phantom.depth = 9"));
    assert!(stdout.contains("seed"));
}

#[test]
fn same_spec_same_checksum_and_depth_one_is_valid() {
    let s = Sandbox::new();
    s.write("flat.cfg", "phantom.width = 12\nphantom.height = 10\nphantom.depth = 1\n");
    let a = s.ok(&["phantom", "--spec", "{flat.cfg}", "--out", "{a.bvol}"]);
    let b = s.ok(&["phantom", "--spec", "{flat.cfg}", "--out", "{b.bvol}"]);
    assert_eq!(checksum(&a, "a.bvol"), checksum(&b, "b.bvol"));
    let c = s.ok(&["phantom", "--spec", "{flat.cfg}", "--seed", "1", "--out", "{c.bvol}"]);
    assert_ne!(checksum(&a, "a.bvol"), checksum(&c, "c.bvol"));
}

#[test]
fn eval_of_identical_volumes() {
    let s = Sandbox::new();
    // SSIM needs at least 11 pixels along every plane axis
    s.ok(&["--config", "{tiny.cfg}", "--set", "phantom.depth=12", "phantom", "--out", "{p.bvol}"]);
    let stdout = s.ok(&["eval", "--input", "{p.bvol}", "--reference", "{p.bvol}", "--out", "{m.csv}"]);
    let csv = String::from_utf8(s.read("m.csv")).unwrap();
    let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    let col = |name: &str| row[header.iter().position(|h| *h == name).unwrap()];
    assert_eq!(col("psnr"), "inf");
    for plane in ["ssim_axial", "ssim_sagittal", "ssim_coronal"] {
        assert_eq!(col(plane).parse::<f64>().unwrap(), 1.0);
    }
    assert!(stdout.contains("psnr"));
}

#[test]
fn eval_shape_mismatch_exits_3() {
    let s = Sandbox::new();
    s.ok(&["--config", "{tiny.cfg}", "phantom", "--out", "{a.bvol}"]);
    s.ok(&["--config", "{tiny.cfg}", "--set", "phantom.depth=3", "phantom", "--out", "{b.bvol}"]);
    let e = s.fails(&["eval", "--input", "{a.bvol}", "--reference", "{b.bvol}", "--out", "{m.csv}"]);
    assert_eq!(e.exit_code(), 3);
    let msg = e.to_string();
    assert!(msg.contains("expected") && msg.contains("found"));
}

#[test]
fn blend_and_blendpp_differ() {
    let s = Sandbox::new();
    s.ok(&["--config", "{tiny.cfg}", "reconstruct", "--method", "blendpp", "--out", "{pp.bvol}"]);
    s.ok(&["--config", "{tiny.cfg}", "reconstruct", "--method", "blend", "--out", "{bl.bvol}"]);
    let (a, b) = (s.read("pp.bvol"), s.read("bl.bvol"));
    assert_eq!(a.len(), b.len());
    assert_ne!(a, b);
}

#[test]
fn checkpoint_architecture_mismatch_exits_3() {
    let s = Sandbox::new();
    s.ok(&["--config", "{tiny.cfg}", "--set", "train.network=conditional", "train", "--out", "{cond.ckpt}"]);
    let e = s.fails(&[
        "--config",
        "{tiny.cfg}",
        "reconstruct",
        "--method",
        "blendpp",
        "--checkpoint",
        "{cond.ckpt}",
        "--out",
        "{x.bvol}",
    ]);
    assert_eq!(e.exit_code(), 3);
    let msg = e.to_string();
    assert!(msg.contains("expected") && msg.contains("found"), "{msg}");
}

#[test]
fn training_writes_checkpoint_and_loss_curve() {
    let s = Sandbox::new();
    let stdout = s.ok(&["--config", "{tiny.cfg}", "train", "--out", "{net.ckpt}"]);
    checksum(&stdout, "net.ckpt");
    let loss = String::from_utf8(s.read("net.ckpt.loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 1 + 4);
}

#[test]
fn bundled_benchmark_reconstruction_writes_metrics() {
    let s = Sandbox::new();
    let stdout = s.ok(&[
        "--config",
        "{tiny.cfg}",
        "reconstruct",
        "--method",
        "blendpp",
        "--views",
        "8",
        "--out",
        "{r.bvol}",
        "--metrics",
        "{r.csv}",
    ]);
    assert!(stdout.contains("psnr"));
    let csv = String::from_utf8(s.read("r.csv")).unwrap();
    assert!(csv.lines().next().unwrap().contains("psnr"));
    assert_eq!(csv.lines().count(), 2);
}

#[test]
fn oracle_check_passes_quickly() {
    let s = Sandbox::new();
    let t0 = Instant::now();
    let stdout = s.ok(&["oracle-check"]);
    assert!(t0.elapsed() < Duration::from_secs(60));
    for suite in ["oracle-exactness", "adjoint", "cg-termination", "product-bound", "separable-reduction"] {
        assert!(stdout.lines().any(|l| l.starts_with(suite) && l.contains("pass")), "{suite}: {stdout}");
    }
}

#[test]
fn injected_adjoint_fault_is_caught() {
    let s = Sandbox::new();
    let (r, stdout) = s.invoke(&["oracle-check"], true);
    let e = r.expect_err("fault detected");
    assert_eq!(e.exit_code(), 1);
    assert!(e.to_string().contains("adjoint"));
    assert!(stdout.lines().any(|l| l.starts_with("adjoint") && l.contains("FAIL")));
}
