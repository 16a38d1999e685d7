use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use diffblend::diffusion::make_schedule;
use diffblend::recon::{reconstruct_blend, reconstruct_blendpp, reconstruct_ztv};
use diffblend::volume::{pad_repeat, round_up_depth};
use diffblend::{
    ct, training, Ablation, DeskBenchmark, DenoiserParams, GaussianPrior, MetricReport, NetworkKind, NoiseDirection,
    NoiseSchedule, Optimizer, PartitionPolicy, PhantomSpec, ReconConfig, ReconProblem, ScanMode, ScoreBackend,
    Sinogram, TrainConfig, ViewGeometry, Volume3D,
};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::CliError;

pub fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}

fn echo(w: &mut dyn Write, command: &str, cfg: &RunConfig) -> std::io::Result<()> {
    writeln!(w, "# diffblend {command}")?;
    writeln!(w, "{cfg}")
}

fn require_input(path: &Path) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Config(format!("input {} does not exist", path.display())))
    }
}

fn require_output(path: &Path) -> Result<(), CliError> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() && !p.is_dir() => Err(CliError::Config(format!(
            "output directory {} does not exist",
            p.display()
        ))),
        _ => Ok(()),
    }
}

/// Writes `bytes` and prints their SHA-256.
fn emit(w: &mut dyn Write, path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    writeln!(w, "sha256 {}  {}", hex::encode(Sha256::digest(bytes)), path.display())?;
    Ok(())
}

fn read_volume(path: &Path) -> Result<Volume3D, CliError> {
    Ok(Volume3D::read_bvol(BufReader::new(File::open(path)?))?)
}

fn volume_bytes(v: &Volume3D) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    v.write_bvol(&mut buf)?;
    Ok(buf)
}

fn schedule(cfg: &RunConfig) -> Result<NoiseSchedule, CliError> {
    make_schedule(cfg.get("schedule.steps")?, cfg.get("schedule.beta_min")?, cfg.get("schedule.beta_max")?)
        .map_err(|e| CliError::Config(e.to_string()))
}

fn geometry(cfg: &RunConfig, width: usize, height: usize) -> Result<ViewGeometry, CliError> {
    let mode = match cfg.choice("geometry.mode", &["sparse", "limited"])? {
        "sparse" => ScanMode::Sparse,
        _ => ScanMode::Limited,
    };
    let n_det = match cfg.get::<usize>("geometry.n_det")? {
        0 => ct::default_n_det(width, height),
        n => n,
    };
    ct::make_geometry(mode, cfg.get("geometry.views")?, n_det).map_err(|e| CliError::Config(e.to_string()))
}

fn benchmark(cfg: &RunConfig) -> Result<DeskBenchmark, CliError> {
    Ok(DeskBenchmark {
        width: cfg.get("phantom.width")?,
        height: cfg.get("phantom.height")?,
        depth: cfg.get("phantom.depth")?,
        ellipses: cfg.get("phantom.ellipses")?,
        z_variation: cfg.get("phantom.z_variation")?,
        train_volumes: cfg.get("train.volumes")?,
        views: cfg.get("geometry.views")?,
        seed: cfg.seed,
        ..Default::default()
    })
}

pub fn phantom(w: &mut dyn Write, cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    require_output(out)?;
    echo(w, "phantom", cfg)?;
    let spec = PhantomSpec {
        z_variation: cfg.get("phantom.z_variation")?,
        ..PhantomSpec::new(
            cfg.get("phantom.width")?,
            cfg.get("phantom.height")?,
            cfg.get("phantom.depth")?,
            cfg.get("phantom.ellipses")?,
            cfg.seed,
        )
    };
    spec.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let v = diffblend::phantom::make_phantom(&spec)?;
    writeln!(w, "dims {} x {} x {}", v.width(), v.height(), v.depth())?;
    emit(w, out, &volume_bytes(&v)?)
}

pub fn project(w: &mut dyn Write, cfg: &RunConfig, input: &Path, out: &Path, geometry_out: &Path) -> Result<(), CliError> {
    require_input(input)?;
    require_output(out)?;
    require_output(geometry_out)?;
    echo(w, "project", cfg)?;
    let v = read_volume(input)?;
    let g = geometry(cfg, v.width(), v.height())?;
    let sino = ct::project(&v, &g)?;
    let mut buf = Vec::new();
    sino.write_bsin(&mut buf)?;
    emit(w, out, &buf)?;
    emit(w, geometry_out, g.to_text().as_bytes())
}

fn read_measurements(sino: &Path, geometry: &Path) -> Result<(Sinogram, ViewGeometry), CliError> {
    require_input(sino)?;
    require_input(geometry)?;
    let s = Sinogram::read_bsin(BufReader::new(File::open(sino)?))?;
    let g = ViewGeometry::from_text(&std::fs::read_to_string(geometry)?)?;
    if !s.matches(&g) {
        return Err(CliError::Mismatch(format!(
            "sinogram and geometry disagree\n  expected: {} views x {} bins (geometry)\n  found:    {} views x {} bins (sinogram)",
            g.n_views(),
            g.n_det(),
            s.n_views(),
            s.n_det()
        )));
    }
    Ok((s, g))
}

pub fn fbp(w: &mut dyn Write, cfg: &RunConfig, sino: &Path, geometry: &Path, out: &Path) -> Result<(), CliError> {
    require_output(out)?;
    let (s, g) = read_measurements(sino, geometry)?;
    echo(w, "fbp", cfg)?;
    let v = ct::fbp(&s, &g, cfg.get("phantom.width")?, cfg.get("phantom.height")?)?;
    emit(w, out, &volume_bytes(&v)?)
}

fn network_kind(cfg: &RunConfig) -> Result<NetworkKind, CliError> {
    Ok(match cfg.choice("train.network", &["joint", "conditional"])? {
        "joint" => NetworkKind::Joint { k: cfg.get("train.k")? },
        _ => NetworkKind::Conditional { j: cfg.get("train.j")? },
    })
}

fn train_config(cfg: &RunConfig) -> Result<TrainConfig, CliError> {
    let optimizer = match cfg.choice("train.optimizer", &["sgd", "momentum"])? {
        "sgd" => Optimizer::Sgd,
        _ => Optimizer::Momentum(cfg.get("train.momentum")?),
    };
    let clip: f64 = cfg.get("train.grad_clip")?;
    let crop: usize = cfg.get("train.crop")?;
    let tc = TrainConfig {
        hidden: cfg.get("train.hidden")?,
        emb_dim: cfg.get("train.emb_dim")?,
        skip: cfg.get("train.skip")?,
        iterations: cfg.get("train.iterations")?,
        batch_size: cfg.get("train.batch_size")?,
        learning_rate: cfg.get("train.learning_rate")?,
        optimizer,
        grad_clip: (clip > 0.0).then_some(clip),
        crop: (crop > 0).then_some(crop),
        partitions: PartitionPolicy::Blend {
            cross_frequency: cfg.get("train.cross_frequency")?,
        },
        seed: cfg.seed,
        ..TrainConfig::new(network_kind(cfg)?)
    };
    tc.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(tc)
}

pub fn train(w: &mut dyn Write, cfg: &RunConfig, data: &[PathBuf], out: &Path, loss_csv: &Path) -> Result<(), CliError> {
    for d in data {
        require_input(d)?;
    }
    require_output(out)?;
    require_output(loss_csv)?;
    let tc = train_config(cfg)?;
    let sched = schedule(cfg)?;
    echo(w, "train", cfg)?;
    let volumes = if data.is_empty() {
        benchmark(cfg)?.training_family()?
    } else {
        data.iter().map(|p| read_volume(p)).collect::<Result<Vec<_>, _>>()?
    };
    let outcome = match tc.kind {
        NetworkKind::Joint { .. } => training::train_blendpp(&volumes, &tc, &sched)?,
        NetworkKind::Conditional { .. } => training::train_blend(&volumes, &tc, &sched)?,
    };
    let tail = &outcome.losses[outcome.losses.len().saturating_sub(100)..];
    if !tail.is_empty() {
        writeln!(w, "final loss {:.6} (mean of last {})", tail.iter().sum::<f64>() / tail.len() as f64, tail.len())?;
    }
    let mut buf = Vec::new();
    outcome.params.write_checkpoint(&mut buf)?;
    emit(w, out, &buf)?;
    let mut csv = Vec::new();
    outcome.write_loss_csv(&mut csv)?;
    emit(w, loss_csv, &csv)
}

pub struct ReconPaths {
    pub sino: Option<PathBuf>,
    pub geometry: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub reference: Option<PathBuf>,
    pub out: PathBuf,
    pub metrics: Option<PathBuf>,
    pub diagnostics: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Method {
    BlendPP,
    Blend,
    Ztv,
}

fn recon_config(cfg: &RunConfig, method: Method) -> Result<ReconConfig, CliError> {
    let ablation = match (method, cfg.choice("recon.ablation", &["none", "fixed-partition", "adjacency-only"])?) {
        (Method::Ztv, _) => Ablation::Ztv(cfg.get("recon.ztv_weight")?),
        (_, "none") => Ablation::None,
        (Method::BlendPP, "fixed-partition") => Ablation::FixedPartition,
        (Method::BlendPP, _) => Ablation::AdjacencyOnly,
        (Method::Blend, a) => {
            return Err(CliError::Config(format!("recon.ablation = {a} only applies to blendpp")));
        }
    };
    let direction = match cfg.choice("recon.direction", &["rederived", "from-score"])? {
        "rederived" => NoiseDirection::Rederived,
        _ => NoiseDirection::FromScore,
    };
    let rc = ReconConfig {
        nfe: cfg.get("recon.nfe")?,
        eta: cfg.get("recon.eta")?,
        cg_iters: cfg.get("recon.cg_iters")?,
        k: cfg.get("recon.k")?,
        j: cfg.get("recon.j")?,
        cross_frequency: cfg.get("recon.cross_frequency")?,
        ablation,
        direction,
        seed: cfg.seed,
        threads: cfg.threads,
    };
    rc.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(rc)
}

pub fn reconstruct(w: &mut dyn Write, cfg: &RunConfig, paths: &ReconPaths) -> Result<(), CliError> {
    let method = match cfg.choice("recon.method", &["blendpp", "blend", "ztv"])? {
        "blendpp" => Method::BlendPP,
        "blend" => Method::Blend,
        _ => Method::Ztv,
    };
    for p in [&paths.checkpoint, &paths.reference].into_iter().flatten() {
        require_input(p)?;
    }
    for p in [Some(&paths.out), paths.metrics.as_ref(), paths.diagnostics.as_ref()].into_iter().flatten() {
        require_output(p)?;
    }
    let rc = recon_config(cfg, method)?;
    let sched = schedule(cfg)?;
    let bench = benchmark(cfg)?;
    let (sino, geom, mut reference) = match (&paths.sino, &paths.geometry) {
        (Some(s), Some(g)) => {
            let (s, g) = read_measurements(s, g)?;
            (s, g, None)
        }
        _ => {
            let gt = bench.ground_truth()?;
            let g = geometry(cfg, bench.width, bench.height)?;
            (ct::project(&gt, &g)?, g, Some(gt))
        }
    };
    if let Some(r) = &paths.reference {
        reference = Some(read_volume(r)?);
    }
    if paths.metrics.is_some() && reference.is_none() {
        return Err(CliError::Config("--metrics needs a reference volume".into()));
    }
    echo(w, "reconstruct", cfg)?;
    let (width, height) = (bench.width, bench.height);
    if let Some(r) = &reference {
        if r.dims() != (width, height, sino.depth()) {
            return Err(CliError::Mismatch(format!(
                "reference shape differs\n  expected: {:?}\n  found:    {:?}",
                (width, height, sino.depth()),
                r.dims()
            )));
        }
    }
    let expected = match method {
        Method::BlendPP => NetworkKind::Joint { k: rc.k },
        Method::Blend => NetworkKind::Conditional { j: rc.j },
        Method::Ztv => NetworkKind::Joint { k: 1 },
    };
    let backend: Box<dyn ScoreBackend> = match &paths.checkpoint {
        Some(p) => {
            let params = DenoiserParams::read_checkpoint(BufReader::new(File::open(p)?))?;
            if params.arch().kind != expected {
                return Err(CliError::Mismatch(format!(
                    "checkpoint architecture does not fit the method\n  expected: {expected:?}\n  found:    {:?}",
                    params.arch().kind
                )));
            }
            writeln!(w, "backend denoiser {}", p.display())?;
            Box::new(params)
        }
        None => {
            let depth = match method {
                Method::BlendPP => round_up_depth(sino.depth(), rc.k * rc.k),
                _ => sino.depth(),
            };
            if bench.depth != sino.depth() {
                return Err(CliError::Mismatch(format!(
                    "oracle phantom family depth differs from the measurements\n  expected: {}\n  found:    {}",
                    sino.depth(),
                    bench.depth
                )));
            }
            let family = bench
                .training_family()?
                .iter()
                .map(|v| pad_repeat(v, depth))
                .collect::<Result<Vec<_>, _>>()?;
            writeln!(w, "backend gaussian oracle fitted to {} phantoms", family.len())?;
            Box::new(GaussianPrior::fit(&family)?)
        }
    };
    let problem = ReconProblem {
        sinogram: &sino,
        geometry: &geom,
        width,
        height,
    };
    let outcome = match method {
        Method::BlendPP => reconstruct_blendpp(&problem, backend.as_ref(), &sched, &rc, reference.as_ref())?,
        Method::Blend => reconstruct_blend(&problem, backend.as_ref(), &sched, &rc, reference.as_ref())?,
        Method::Ztv => reconstruct_ztv(&problem, backend.as_ref(), &sched, &rc, reference.as_ref())?,
    };
    emit(w, &paths.out, &volume_bytes(&outcome.volume)?)?;
    if let Some(d) = &paths.diagnostics {
        let mut buf = Vec::new();
        outcome.write_diagnostics_csv(&mut buf)?;
        emit(w, d, &buf)?;
    }
    if let (Some(m), Some(r)) = (&paths.metrics, &reference) {
        let report = MetricReport::compute(&outcome.volume, r)?;
        writeln!(w, "psnr {:.3} ztv {:.5}", report.psnr, report.ztv)?;
        let mut buf = Vec::new();
        report.write_csv(&mut buf)?;
        emit(w, m, &buf)?;
    }
    Ok(())
}

pub fn eval(w: &mut dyn Write, input: &Path, reference: &Path, out: &Path) -> Result<(), CliError> {
    require_input(input)?;
    require_input(reference)?;
    require_output(out)?;
    writeln!(w, "# diffblend eval")?;
    let x = read_volume(input)?;
    let r = read_volume(reference)?;
    if x.dims() != r.dims() {
        return Err(CliError::Mismatch(format!(
            "volume shapes differ\n  expected: {:?} (reference)\n  found:    {:?}",
            r.dims(),
            x.dims()
        )));
    }
    let report = MetricReport::compute(&x, &r)?;
    writeln!(w, "{}", MetricReport::CSV_HEADER)?;
    writeln!(w, "{}", report.csv_row())?;
    let mut buf = Vec::new();
    report.write_csv(&mut buf)?;
    emit(w, out, &buf)
}
