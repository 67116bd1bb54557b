use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};

use radar_uq::bdaf::{gradient_check, AttentionWeights, Matrix, TokenSequence};
use radar_uq::detect::{detect_cube, PolarDetection};
use radar_uq::doppler::{consistency_filter, estimate_ego_velocity_ransac, EgoVelocity};
use radar_uq::groundtruth::voxelize_frustum;
use radar_uq::io::{self, fmt_num, format_numbers, WeightBundle};
use radar_uq::metrics::evaluate;
use radar_uq::pipeline::run_pipeline;
use radar_uq::registration::register_uncertain;
use radar_uq::sim::{generate_scene, render_cube, CellLabel};
use radar_uq::uncertainty::propagate_point;

use crate::config::Config;
use crate::failure::Failure;

/// Where a command's primary text output goes.
pub struct Output {
    dir: Option<PathBuf>,
    inputs: Vec<PathBuf>,
}

impl Output {
    pub fn new(dir: Option<PathBuf>, inputs: &[&Path]) -> Self {
        Self { dir, inputs: inputs.iter().map(|p| p.to_path_buf()).collect() }
    }

    fn require_dir(&self) -> Result<&Path> {
        self.dir.as_deref().ok_or_else(|| Failure::config("this command needs --out DIR (or paths.out)").into())
    }

    /// Writes `name` inside the output directory, refusing to touch inputs.
    fn file(&self, name: &str, contents: &[u8]) -> Result<PathBuf> {
        let dir = self.require_dir()?;
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(name);
        for input in &self.inputs {
            if let (Ok(a), Ok(b)) = (fs::canonicalize(input), fs::canonicalize(&path)) {
                if a == b {
                    return Err(Failure::config(format!("refusing to overwrite input {}", input.display())).into());
                }
            }
        }
        let mut w = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
        w.write_all(contents)?;
        w.flush()?;
        Ok(path)
    }

    /// Writes to `name` in the output directory when one is set, else stdout.
    fn emit(&self, name: &str, text: &str, stdout: &mut dyn Write) -> Result<()> {
        if self.dir.is_some() {
            self.file(name, text.as_bytes())?;
        } else {
            stdout.write_all(text.as_bytes())?;
        }
        Ok(())
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| format!("reading {}", path.display()))?))
}

fn read_detections(path: &Path) -> Result<Vec<PolarDetection>> {
    io::read_detections(open(path)?).with_context(|| format!("parsing {}", path.display()))
}

fn key_values(pairs: &[(String, String)]) -> String {
    pairs.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

pub fn simulate(cfg: &Config, out: &Output, stdout: &mut dyn Write) -> Result<()> {
    out.require_dir()?;
    let p = &cfg.pipeline;
    let intr = p.intrinsics();
    let scene = generate_scene(&p.scene_config(), &intr)?;
    let (cube, labels) = render_cube(&scene, &intr, &p.noise)?;

    let mut cube_bytes = Vec::new();
    io::write_cube(&mut cube_bytes, &cube)?;
    out.file("cube.rcub", &cube_bytes)?;

    let mut label_text = String::new();
    let mut counts = [0usize; 3];
    for (cell, label) in labels.cells.iter().enumerate() {
        let index = match label {
            CellLabel::Background => continue,
            CellLabel::Noise => {
                counts[2] += 1;
                "-".to_string()
            }
            CellLabel::True(i) => {
                counts[0] += 1;
                i.to_string()
            }
            CellLabel::Ghost(i) => {
                counts[1] += 1;
                i.to_string()
            }
        };
        let [ir, ia, ie] = intr.unflatten(cell);
        label_text.push_str(&format!("{ir} {ia} {ie} {} {index}\n", label.tag()));
    }
    out.file("labels.txt", label_text.as_bytes())?;

    let truth = scene.ground_truth_cloud();
    out.file("truth.xyz", io::format_cloud(&truth).as_bytes())?;
    let mut occ = Vec::new();
    io::write_occupancy(&mut occ, &voxelize_frustum(&truth, &intr).grid)?;
    out.file("occupancy.rocc", &occ)?;
    let v = scene.ego_velocity.0;
    out.file("ego.txt", format!("{}\n", format_numbers(&[v.x, v.y, v.z])).as_bytes())?;

    let report = vec![
        ("seed".to_string(), scene.seed.to_string()),
        ("scatterers".into(), scene.scatterers.len().to_string()),
        ("ghosts".into(), scene.ghosts.len().to_string()),
        ("true_cells".into(), counts[0].to_string()),
        ("ghost_cells".into(), counts[1].to_string()),
        ("noise_cells".into(), counts[2].to_string()),
        ("ego_velocity".into(), format!("{},{},{}", fmt_num(v.x), fmt_num(v.y), fmt_num(v.z))),
    ];
    stdout.write_all(key_values(&report).as_bytes())?;
    Ok(())
}

pub fn detect(cfg: &Config, cube_path: &Path, out: &Output, stdout: &mut dyn Write) -> Result<()> {
    let cube = io::read_cube(open(cube_path)?).with_context(|| format!("parsing {}", cube_path.display()))?;
    let dets = detect_cube(&cube, &cfg.pipeline.cfar, cfg.pipeline.thresholds.min_intensity)?;
    out.emit("detections.txt", &io::format_detections(&dets, None), stdout)
}

fn parse_velocity_file(path: &Path) -> Result<EgoVelocity> {
    let rows = io::read_records(open(path)?, 3).with_context(|| format!("parsing {}", path.display()))?;
    let row = rows.first().ok_or_else(|| radar_uq::Error::Format(format!("{} holds no velocity", path.display())))?;
    Ok(EgoVelocity::new(row[0], row[1], row[2]))
}

pub enum VelocitySource {
    Given([f64; 3]),
    File(PathBuf),
    Estimate,
}

pub fn filter(
    cfg: &Config,
    dets_path: &Path,
    velocity: VelocitySource,
    out: &Output,
    stdout: &mut dyn Write,
) -> Result<()> {
    let dets = read_detections(dets_path)?;
    let v = match velocity {
        VelocitySource::Given([x, y, z]) => EgoVelocity::new(x, y, z),
        VelocitySource::File(p) => parse_velocity_file(&p)?,
        VelocitySource::Estimate => estimate_ego_velocity_ransac(&dets, &cfg.pipeline.ransac_config())?.velocity,
    };
    let verdicts = consistency_filter(&dets, &v, cfg.pipeline.thresholds.doppler);
    let (kept, residuals): (Vec<PolarDetection>, Vec<f64>) =
        verdicts.iter().filter(|x| x.inlier).map(|x| (dets[x.index], x.residual)).unzip();
    out.emit("filtered.txt", &io::format_detections(&kept, Some(&residuals)), stdout)
}

pub fn propagate(cfg: &Config, dets_path: &Path, out: &Output, stdout: &mut dyn Write) -> Result<()> {
    let dets = read_detections(dets_path)?;
    let pts: Vec<_> = dets.iter().map(|d| propagate_point(d.coord, &cfg.pipeline.sigmas)).collect();
    out.emit("uncertain.txt", &io::format_uncertain_cloud(&pts), stdout)
}

pub fn evaluate_clouds(cfg: &Config, pred: &Path, truth: &Path, out: &Output, stdout: &mut dyn Write) -> Result<()> {
    let p = io::read_cloud(open(pred)?).with_context(|| format!("parsing {}", pred.display()))?;
    let q = io::read_cloud(open(truth)?).with_context(|| format!("parsing {}", truth.display()))?;
    let t = &cfg.pipeline.thresholds;
    let m = evaluate(&p, &q, t.tau, t.zeta)?;
    writeln!(stdout, "{}", format_numbers(&[m.chamfer, m.f_score, m.precision, m.recall, m.cpr]))?;
    if out.dir.is_some() {
        let report = vec![
            ("cd".to_string(), fmt_num(m.chamfer)),
            ("f".into(), fmt_num(m.f_score)),
            ("precision".into(), fmt_num(m.precision)),
            ("recall".into(), fmt_num(m.recall)),
            ("cpr".into(), fmt_num(m.cpr)),
            ("tau".into(), fmt_num(m.tau)),
            ("zeta".into(), fmt_num(m.zeta)),
            ("predicted_points".into(), p.len().to_string()),
            ("reference_points".into(), q.len().to_string()),
            ("empty_reference".into(), m.empty_reference.to_string()),
        ];
        out.file("evaluate.txt", key_values(&report).as_bytes())?;
    }
    Ok(())
}

pub fn register(cfg: &Config, src: &Path, tgt: &Path, stdout: &mut dyn Write) -> Result<()> {
    let a = io::read_uncertain_cloud(open(src)?).with_context(|| format!("parsing {}", src.display()))?;
    let b = io::read_uncertain_cloud(open(tgt)?).with_context(|| format!("parsing {}", tgt.display()))?;
    let reg = register_uncertain(&a, &b, &cfg.pipeline.registration)?;
    let t = reg.transform.translation;
    let q = reg.transform.quaternion();
    writeln!(stdout, "{} {}", format_numbers(&[t.x, t.y, t.z, q.w, q.i, q.j, q.k, reg.cost]), reg.iterations)?;
    Ok(())
}

pub fn eve(cfg: &Config, dets_path: &Path, stdout: &mut dyn Write) -> Result<()> {
    let dets = read_detections(dets_path)?;
    let est = estimate_ego_velocity_ransac(&dets, &cfg.pipeline.ransac_config())?;
    let v = est.velocity.0;
    writeln!(stdout, "{} {} {}", format_numbers(&[v.x, v.y, v.z]), est.inlier_count(), dets.len())?;
    Ok(())
}

pub struct BdafCheckArgs {
    pub weights: Option<PathBuf>,
    pub save_weights: Option<PathBuf>,
    pub instances: usize,
    pub tokens: usize,
    pub channels: usize,
    pub key_dim: usize,
    pub step: f64,
    pub tolerance: f64,
}

pub fn bdaf_check(seed: u64, args: &BdafCheckArgs, stdout: &mut dyn Write) -> Result<()> {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    if args.instances == 0
        || args.tokens == 0
        || args.channels == 0
        || args.key_dim == 0
        || args.step.is_nan()
        || args.step <= 0.0
    {
        return Err(Failure::config("bdaf-check sizes and step must be positive").into());
    }
    let fixed = match &args.weights {
        Some(p) => Some(io::read_weights(open(p)?).with_context(|| format!("parsing {}", p.display()))?),
        None => None,
    };
    if let Some(path) = &args.save_weights {
        let bundle = WeightBundle {
            tokens: args.tokens,
            weights: AttentionWeights::random(args.channels, args.key_dim, 0.5, seed),
        };
        let mut bytes = Vec::new();
        io::write_weights(&mut bytes, &bundle)?;
        fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))?;
    }

    let mut worst = 0.0f64;
    let mut entries = 0usize;
    for k in 0..args.instances {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k as u64);
        let (l, w) = match &fixed {
            Some(b) => (b.tokens.max(1), b.weights.clone()),
            None => {
                (args.tokens, AttentionWeights::random(args.channels, args.key_dim, 0.5, seed.wrapping_add(k as u64)))
            }
        };
        let c = w.channels();
        let mut tokens = || TokenSequence(Matrix::from_fn(l, c, |_, _| rng.random_range(-1.0..1.0)));
        let (s, d) = (tokens(), tokens());
        let check = gradient_check(&s, &d, &w, args.step)?;
        worst = worst.max(check.max_relative_error);
        entries += check.entries_checked;
    }
    let pass = worst <= args.tolerance;
    let report = vec![
        ("instances".to_string(), args.instances.to_string()),
        ("entries_checked".into(), entries.to_string()),
        ("max_relative_error".into(), fmt_num(worst)),
        ("tolerance".into(), fmt_num(args.tolerance)),
        ("pass".into(), pass.to_string()),
    ];
    stdout.write_all(key_values(&report).as_bytes())?;
    if pass {
        Ok(())
    } else {
        Err(anyhow!(Failure {
            code: crate::failure::EXIT_COMPUTE,
            message: format!("gradient check failed: {} > {}", fmt_num(worst), fmt_num(args.tolerance)),
        }))
    }
}

pub fn pipeline(cfg: &Config, out: &Output, stdout: &mut dyn Write) -> Result<()> {
    let run = run_pipeline(&cfg.pipeline)?;
    let r = &run.report;
    let mut text = key_values(&r.key_values());
    text.push_str(&format!(
        "# Doppler filtering kept {} of {} detections; clutter ratio {} -> {}, F-score {} -> {}\n",
        r.inliers,
        r.detections,
        fmt_num(r.unfiltered.cpr),
        fmt_num(r.filtered.cpr),
        fmt_num(r.unfiltered.f_score),
        fmt_num(r.filtered.f_score),
    ));
    if out.dir.is_some() {
        let mut cube = Vec::new();
        io::write_cube(&mut cube, &run.cube)?;
        out.file("cube.rcub", &cube)?;
        out.file("truth.xyz", io::format_cloud(&run.truth).as_bytes())?;
        out.file("detections.txt", io::format_detections(&run.detections, None).as_bytes())?;
        let residuals: Vec<f64> = run.verdicts.iter().filter(|v| v.inlier).map(|v| v.residual).collect();
        out.file("filtered.txt", io::format_detections(&run.inlier_detections(), Some(&residuals)).as_bytes())?;
        out.file("uncertain.txt", io::format_uncertain_cloud(&run.uncertain).as_bytes())?;
        out.file("report.txt", text.as_bytes())?;
    }
    stdout.write_all(text.as_bytes())?;
    Ok(())
}
