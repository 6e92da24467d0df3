use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use pcari::analysis::{frame_stability, ratio_stats, DatasetStability, MeshStability};
use pcari::canonical::{canonical_set_from, frame_set};
use pcari::geometry::PointCloud;
use pcari::ingest::{
    format_manifest, format_xyz, load_cloud, load_mesh, parse_off, parse_xyz, read_manifest,
    read_text, sample_surface, synthetic_dataset, MeshSampling, ShapeSpec,
};
use pcari::seed::seed_from_key;
use pcari::train::{
    evaluate, load_datasets, synthetic_test_set, train as train_model, Checkpoint, EvalReport,
    Protocol, RotationMode, TrainConfig,
};

use crate::{FrameChoice, UsageError};

fn write_file(path: &Path, contents: &str) -> anyhow::Result<()> {
    std::fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))
}

fn print_json(value: &serde_json::Value) {
    println!(
        "{}",
        serde_json::to_string_pretty(value).expect("json value serializes")
    );
}

fn is_off(path: &Path, text: &str) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("off"))
        || text.trim_start().starts_with("OFF")
}

/// Refuses to overwrite an input file.
fn ensure_distinct(input: &Path, output: &Path) -> anyhow::Result<()> {
    let same = match (input.canonicalize(), output.canonicalize()) {
        (Ok(a), Ok(b)) => a == b,
        _ => false,
    };
    if same {
        return Err(UsageError(format!(
            "output {} would overwrite the input",
            output.display()
        ))
        .into());
    }
    Ok(())
}

fn suffixed(path: &Path, sign_code: usize) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}_s{sign_code}.{}", ext.to_string_lossy()),
        None => format!("{stem}_s{sign_code}"),
    };
    path.with_file_name(name)
}

/// Reads the cloud as given: meshes are sampled but not rescaled, so a
/// rotated input yields the same canonical coordinates.
fn read_raw_cloud(path: &Path, points: usize, seed: u64) -> anyhow::Result<PointCloud> {
    let text = read_text(path)?;
    let cloud = if is_off(path, &text) {
        let mesh = parse_off(&text).with_context(|| format!("{}", path.display()))?;
        sample_surface(&mesh, points, &mut ChaCha8Rng::seed_from_u64(seed))?
    } else {
        parse_xyz(&text).with_context(|| format!("{}", path.display()))?
    };
    Ok(cloud)
}

pub fn canonicalize(
    input: &Path,
    output: &Path,
    frame: FrameChoice,
    points: usize,
    seed: u64,
    json: bool,
) -> anyhow::Result<()> {
    if points < 3 {
        return Err(UsageError(format!("--points must be at least 3, got {points}")).into());
    }
    let cloud = read_raw_cloud(input, points, seed)?;
    let frames = frame_set(&cloud)?;
    if frames.degenerate() {
        log::warn!(
            "{}: tied covariance eigenvalues {:?}; the frame is not unique, using the solver basis",
            input.display(),
            frames.eigenvalues
        );
    }
    let canon = canonical_set_from(&cloud, &frames);
    let targets: Vec<(usize, PathBuf)> = match frame {
        FrameChoice::Base => vec![(0, output.to_path_buf())],
        FrameChoice::All => (0..canon.len()).map(|s| (s, suffixed(output, s))).collect(),
    };
    for (_, path) in &targets {
        ensure_distinct(input, path)?;
    }
    for (s, path) in &targets {
        write_file(path, &format_xyz(&canon[*s].points))?;
    }
    let outputs: Vec<String> = targets
        .iter()
        .map(|(_, p)| p.display().to_string())
        .collect();
    if json {
        print_json(&json!({
            "input": input.display().to_string(),
            "points": cloud.len(),
            "eigenvalues": frames.eigenvalues,
            "significance": [frames.significance.0, frames.significance.1],
            "degenerate": frames.degenerate(),
            "outputs": outputs,
        }));
    } else {
        let [l1, l2, l3] = frames.eigenvalues;
        println!("points       {}", cloud.len());
        println!("eigenvalues  {l1:.6e} {l2:.6e} {l3:.6e}");
        println!(
            "ratios       {:.4} {:.4}",
            frames.significance.0, frames.significance.1
        );
        for o in &outputs {
            println!("wrote        {o}");
        }
    }
    Ok(())
}

pub fn generate(
    output: &Path,
    per_class: usize,
    points: usize,
    seed: u64,
    json: bool,
) -> anyhow::Result<()> {
    if per_class == 0 || points < 3 {
        return Err(
            UsageError("--per-class must be positive and --points at least 3".into()).into(),
        );
    }
    let specs = ShapeSpec::default_classes();
    let data = synthetic_dataset(&specs, per_class, points, seed)?;
    write_file(output, &format_manifest(&data))?;
    let classes: Vec<&str> = specs.iter().map(|s| s.kind.name()).collect();
    if json {
        print_json(&json!({
            "output": output.display().to_string(),
            "examples": data.len(),
            "points": points,
            "seed": seed,
            "classes": classes,
        }));
    } else {
        println!(
            "wrote {} clouds ({} classes: {}) to {}",
            data.len(),
            classes.len(),
            classes.join(", "),
            output.display()
        );
    }
    Ok(())
}

/// Protocols worth reporting after training: all three for rotation-invariant
/// variants, otherwise those whose training side matches the config.
fn report_protocols(config: &TrainConfig, invariant: bool) -> Vec<Protocol> {
    let standard = [Protocol::Z_Z, Protocol::SO3_SO3, Protocol::Z_SO3];
    let matching: Vec<Protocol> = standard
        .into_iter()
        .filter(|p| invariant || p.train == config.train_rotation)
        .collect();
    if matching.is_empty() {
        let t = config.train_rotation;
        vec![
            Protocol { train: t, test: t },
            Protocol {
                train: t,
                test: RotationMode::So3,
            },
        ]
    } else {
        matching
    }
}

fn protocol_slug(p: &Protocol) -> String {
    p.to_string().replace('/', "_").to_ascii_lowercase()
}

pub fn train(config_path: &Path, out: &Path, json: bool) -> anyhow::Result<()> {
    let text = read_text(config_path)?;
    let config = TrainConfig::parse(&text).with_context(|| format!("{}", config_path.display()))?;
    let base_dir = config_path.parent().unwrap_or(Path::new("."));
    let (train_set, test_set) = load_datasets(&config, base_dir)?;
    log::info!(
        "training {} ({}) on {} clouds",
        config.variant,
        config.effective_fusion(),
        train_set.len()
    );
    let trained = train_model(&config, &train_set)?;
    std::fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    let ckpt_path = out.join("checkpoint.json");
    Checkpoint::from_pipeline(&trained.pipeline).save(&ckpt_path)?;
    write_file(
        &out.join("history.json"),
        &serde_json::to_string_pretty(&trained.history).expect("history serializes"),
    )?;
    let mut reports: Vec<(EvalReport, PathBuf)> = Vec::new();
    if let Some(test_set) = &test_set {
        for p in report_protocols(&config, trained.pipeline.variant().rotation_invariant()) {
            let report = evaluate(&trained.pipeline, test_set, p, config.seed)?;
            let path = out.join(format!("report_{}.json", protocol_slug(&p)));
            write_file(&path, &report.to_json())?;
            write_file(&path.with_extension("txt"), &report.to_table())?;
            reports.push((report, path));
        }
    }
    if json {
        print_json(&json!({
            "checkpoint": ckpt_path.display().to_string(),
            "config_hash": config.hash(),
            "variant": config.variant,
            "fusion": config.effective_fusion(),
            "train_examples": train_set.len(),
            "skipped": trained.skipped,
            "history": trained.history,
            "reports": reports.iter().map(|(r, path)| json!({
                "protocol": r.protocol,
                "overall_accuracy": r.overall_accuracy,
                "path": path.display().to_string(),
            })).collect::<Vec<_>>(),
        }));
    } else {
        let mut table = String::new();
        let _ = writeln!(
            table,
            "variant     {} ({})",
            config.variant,
            config.effective_fusion()
        );
        let _ = writeln!(table, "config      {}  seed {}", config.hash(), config.seed);
        let _ = writeln!(
            table,
            "examples    {}  skipped {}",
            train_set.len(),
            trained.skipped
        );
        if let Some(last) = trained.history.last() {
            let _ = writeln!(table, "final loss  {:.5}", last.mean_loss);
        }
        let _ = writeln!(table, "checkpoint  {}", ckpt_path.display());
        for (r, _) in &reports {
            let _ = writeln!(table, "{:<11} {:.4}", r.protocol, r.overall_accuracy);
        }
        print!("{table}");
    }
    Ok(())
}

pub fn eval(
    checkpoint: &Path,
    protocol: &str,
    data: Option<&Path>,
    seed: Option<u64>,
    out: Option<&Path>,
    json: bool,
) -> anyhow::Result<()> {
    let protocol: Protocol = protocol.parse().map_err(|e| UsageError(format!("{e}")))?;
    let pipeline = Checkpoint::load(checkpoint)?.into_pipeline()?;
    let config = &pipeline.config;
    let test_set = match data {
        Some(path) => read_manifest(
            path,
            MeshSampling {
                points: config.points,
                seed: config.data_seed.unwrap_or(config.seed),
            },
        )?,
        None if config.train_manifest.is_none() => synthetic_test_set(config)?,
        None => bail!(UsageError(
            "the checkpoint was trained from a manifest; pass --data".into()
        )),
    };
    let report = evaluate(&pipeline, &test_set, protocol, seed.unwrap_or(config.seed))?;
    if let Some(path) = out {
        write_file(path, &report.to_json())?;
    }
    if json {
        println!("{}", report.to_json());
    } else {
        print!("{}", report.to_table());
    }
    Ok(())
}

fn listed_files(dir: &Path, extensions: &[&str]) -> anyhow::Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("cannot read directory {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .is_some_and(|e| extensions.iter().any(|x| e.eq_ignore_ascii_case(x)))
        })
        .collect();
    files.sort();
    Ok(files)
}

fn file_key(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

pub fn stats(
    dataset: &Path,
    points: usize,
    seed: u64,
    out: Option<&Path>,
    json: bool,
) -> anyhow::Result<()> {
    let sampling = MeshSampling { points, seed };
    let mut skipped = Vec::new();
    let clouds: Vec<PointCloud> = if dataset.is_dir() {
        let files = listed_files(dataset, &["off", "xyz", "txt", "pts"])?;
        if files.is_empty() {
            bail!("no .off, .xyz, .txt or .pts files in {}", dataset.display());
        }
        let mut clouds = Vec::new();
        for f in files {
            match load_cloud(&f, &file_key(&f), sampling) {
                Ok(c) => clouds.push(c),
                Err(e) => {
                    log::warn!("skipping {}: {e}", f.display());
                    skipped.push(f.display().to_string());
                }
            }
        }
        clouds
    } else {
        read_manifest(dataset, sampling)?
            .into_iter()
            .map(|c| c.cloud)
            .collect()
    };
    if clouds.is_empty() {
        bail!("no readable clouds in {}", dataset.display());
    }
    let hist = ratio_stats(&clouds)?;
    if let Some(path) = out {
        write_file(path, &hist.to_csv())?;
    }
    if json {
        print_json(&json!({ "histogram": hist, "skipped": skipped }));
    } else if out.is_none() {
        print!("{}", hist.to_csv());
    } else {
        println!(
            "clouds               {}  skipped {}",
            hist.clouds,
            skipped.len()
        );
        println!("mean l2/l1           {:.4}", hist.mean_r21);
        println!("mean l3/l2           {:.4}", hist.mean_r32);
        println!("significant fraction {:.4}", hist.significant_fraction);
    }
    Ok(())
}

pub fn stability(
    mesh_dir: &Path,
    points: usize,
    trials: usize,
    seed: u64,
    out: Option<&Path>,
    json: bool,
) -> anyhow::Result<()> {
    if points < 3 || trials == 0 {
        return Err(UsageError("--points must be at least 3 and --trials positive".into()).into());
    }
    let files = listed_files(mesh_dir, &["off"])?;
    if files.is_empty() {
        bail!("no .off meshes in {}", mesh_dir.display());
    }
    let mut meshes = Vec::new();
    let mut skipped = Vec::new();
    for f in files {
        let key = file_key(&f);
        let outcome = load_mesh(&f).map_err(anyhow::Error::from).and_then(|m| {
            Ok(frame_stability(
                &m,
                points,
                trials,
                seed_from_key(seed, &key),
            )?)
        });
        match outcome {
            Ok(report) => meshes.push(MeshStability { mesh: key, report }),
            Err(e) => {
                log::warn!("skipping {}: {e:#}", f.display());
                skipped.push(f.display().to_string());
            }
        }
    }
    if meshes.is_empty() {
        bail!("none of the meshes in {} could be read", mesh_dir.display());
    }
    let result = DatasetStability::new(meshes, skipped);
    if let Some(path) = out {
        write_file(path, &result.to_csv())?;
    }
    if json {
        println!("{}", result.to_json());
    } else if out.is_none() {
        print!("{}", result.to_csv());
    } else {
        let mean = result
            .dataset_mean_deg
            .map_or("-".into(), |m| format!("{m:.3}"));
        println!(
            "meshes       {}  skipped {}",
            result.meshes.len(),
            result.skipped.len()
        );
        println!("mean angle   {mean} deg");
    }
    Ok(())
}
