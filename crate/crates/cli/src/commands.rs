//! Subcommand implementations. Each returns `Ok(())` only after every
//! promised output file has been written.

use std::path::{Path, PathBuf};

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use cobra_core::data::{
    generate_dataset, make_split, read_dataset, read_linestring, read_pgm, write_dataset,
    write_linestring, Scene,
};
use cobra_core::geometry::Polyline;
use cobra_core::losses::LossKind;
use cobra_core::metrics::{polis, EvalReport, EvalRow};
use cobra_core::model::{check_shapes, load_checkpoint, predict, save_checkpoint, Mode, SnakeConfig};
use cobra_core::par::maybe_par_map;
use cobra_core::tensor::NdArray;
use cobra_core::train::{log_to_csv, mc_predict, train};
use cobra_core::{Error, Result};

use crate::config::RunConfig;
use crate::svg::overlay_svg;
use crate::{
    AblateArgs, AblationAxis, EvalArgs, GenerateArgs, PredictArgs, SplitChoice, TrainArgs,
    UncertaintyArgs,
};

fn parse_split_frac(raw: &str) -> Result<(f64, f64, f64)> {
    let parts: Vec<&str> = raw.split(',').collect();
    if parts.len() != 3 {
        return Err(Error::parse(
            "split fractions",
            format!("expected three comma-separated numbers, got `{raw}`"),
        ));
    }
    let mut vals = [0.0; 3];
    for (v, p) in vals.iter_mut().zip(&parts) {
        *v = p
            .trim()
            .parse::<f64>()
            .map_err(|e| Error::parse("split fractions", format!("`{p}`: {e}")))?;
    }
    Ok((vals[0], vals[1], vals[2]))
}

struct SplitScenes {
    train: Vec<Scene>,
    val: Vec<Scene>,
    test: Vec<Scene>,
}

fn load_split(data: &Path, frac: &str, seed: u64) -> Result<SplitScenes> {
    let (scenes, _gen) = read_dataset(data)?;
    let fractions = parse_split_frac(frac)?;
    let (train_ids, val_ids, test_ids) = make_split(scenes.len(), fractions, seed)?;
    let pick = |ids: &[usize]| ids.iter().map(|&i| scenes[i].clone()).collect::<Vec<_>>();
    Ok(SplitScenes {
        train: pick(&train_ids),
        val: pick(&val_ids),
        test: pick(&test_ids),
    })
}

fn scenes_for_choice(split: SplitScenes, choice: SplitChoice) -> Vec<Scene> {
    match choice {
        SplitChoice::Train => split.train,
        SplitChoice::Val => split.val,
        SplitChoice::Test => split.test,
        SplitChoice::All => {
            let mut all = split.train;
            all.extend(split.val);
            all.extend(split.test);
            all.sort_by(|a, b| a.id.cmp(&b.id));
            all
        }
    }
}

fn load_model(ckpt: &Path, config: Option<&Path>) -> Result<(cobra_core::model::ModelParams, RunConfig)> {
    let run_cfg = match config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let params = load_checkpoint(ckpt)?;
    check_shapes(&params, &run_cfg.snake)?;
    Ok((params, run_cfg))
}

pub fn cmd_generate(args: &GenerateArgs) -> Result<()> {
    let mut cfg = cobra_core::data::GenConfig {
        size: args.size,
        count: args.count,
        seed: args.seed,
        speckle: args.speckle,
        ..Default::default()
    };
    if let Some(r) = args.roughness {
        cfg.roughness = r;
    }
    if let Some(c) = args.contrast {
        cfg.contrast = c;
    }
    if let Some(n) = args.noise_sd {
        cfg.noise_sd = n;
    }
    cfg.validate()?;
    let stride = SnakeConfig::default().feature_stride;
    if !args.size.is_multiple_of(stride) {
        return Err(Error::invalid(format!(
            "size {} is not divisible by the default feature stride {stride}",
            args.size
        )));
    }
    if args.out.exists() {
        let non_empty = std::fs::read_dir(&args.out)?.next().is_some();
        if non_empty && !args.force {
            return Err(Error::invalid(format!(
                "output directory {} is not empty (use --force to overwrite)",
                args.out.display()
            )));
        }
    }
    let scenes = generate_dataset(&cfg)?;
    write_dataset(&scenes, &cfg, &args.out)?;
    println!(
        "wrote {} scenes ({}x{}) to {}",
        scenes.len(),
        cfg.size,
        cfg.size,
        args.out.display()
    );
    Ok(())
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let run_cfg = RunConfig::load(&args.config)?;
    let split = load_split(&args.data, &args.split_frac, args.split_seed)?;
    println!(
        "training on {} scenes, validating on {}",
        split.train.len(),
        split.val.len()
    );
    let out = train(
        &split.train,
        &split.val,
        &run_cfg.snake,
        &run_cfg.train,
        args.checkpoint_dir.as_deref(),
    )?;
    save_checkpoint(&out.params, &args.out)?;
    if let Some(log_path) = &args.log {
        std::fs::write(log_path, log_to_csv(&out.log))?;
    }
    println!(
        "best epoch {} (val polis {:.4} px); checkpoint -> {}",
        out.best_epoch,
        out.best_val_polis,
        args.out.display()
    );
    if let Some(epoch) = out.diverged {
        return Err(Error::invalid(format!(
            "training diverged at epoch {epoch}; retained checkpoint is from epoch {}",
            out.best_epoch
        )));
    }
    Ok(())
}

pub fn cmd_predict(args: &PredictArgs) -> Result<()> {
    let (params, run_cfg) = load_model(&args.ckpt, args.config.as_deref())?;
    let cfg = &run_cfg.snake;
    let image = read_pgm(&args.image)?;
    let (h, w) = (image.shape()[0], image.shape()[1]);
    let input = {
        let mut shape = vec![1];
        shape.extend_from_slice(image.shape());
        NdArray::from_vec(&shape, image.data().to_vec()).expect("same element count")
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let contours = predict(&input, &params, cfg, Mode::Eval, &mut rng)?;
    let px: Vec<Polyline> = contours.iter().map(|c| c.to_pixel_coords(h, w)).collect();

    write_linestring(&args.out, px.last().expect("iterations >= 1").vertices())?;

    if let Some(iter_path) = &args.iterations_out {
        let features = px
            .iter()
            .enumerate()
            .map(|(i, c)| {
                cobra_core::data::linestring_feature(c.vertices(), json!({ "iteration": i + 1 }))
            })
            .collect();
        cobra_core::data::write_feature_collection(iter_path, features)?;
    }

    if let Some(svg_path) = &args.svg {
        let truth = match &args.truth {
            Some(p) => Some(Polyline::new(read_linestring(p)?)?),
            None => None,
        };
        let svg = overlay_svg(&image, &px, truth.as_ref())?;
        std::fs::write(svg_path, svg)?;
    }
    println!(
        "prediction ({} vertices, {} iterations) -> {}",
        cfg.vertices,
        px.len(),
        args.out.display()
    );
    Ok(())
}

fn eval_rows(scenes: &[Scene], params: &cobra_core::model::ModelParams, run_cfg: &RunConfig) -> Result<Vec<EvalRow>> {
    let halved = run_cfg.train.polis_halved;
    let cfg = &run_cfg.snake;
    maybe_par_map(scenes.len(), |i| {
        let scene = &scenes[i];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let contours = predict(&scene.model_input(), params, cfg, Mode::Eval, &mut rng)?;
        let pred = contours.last().expect("iterations >= 1");
        let (h, w) = (scene.image.shape()[0], scene.image.shape()[1]);
        Ok(EvalRow {
            scene_id: scene.id.clone(),
            polis_norm: polis(pred, &scene.truth, halved),
            polis_px: polis(
                &pred.to_pixel_coords(h, w),
                &scene.truth.to_pixel_coords(h, w),
                halved,
            ),
            uncertainty: None,
        })
    })
    .into_iter()
    .collect()
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let (params, run_cfg) = load_model(&args.ckpt, args.config.as_deref())?;
    let split = load_split(&args.data, &args.split_frac, args.split_seed)?;
    let scenes = scenes_for_choice(split, args.split);
    if scenes.is_empty() {
        return Err(Error::invalid("selected split holds no scenes"));
    }
    let report = EvalReport::from_rows(eval_rows(&scenes, &params, &run_cfg)?)?;
    std::fs::write(&args.out, report.to_csv())?;
    println!(
        "evaluated {} scenes: mean polis {:.4} px (sd {:.4}) -> {}",
        report.rows.len(),
        report.mean_polis_px,
        report.sd_polis_px,
        args.out.display()
    );
    Ok(())
}

pub fn cmd_uncertainty(args: &UncertaintyArgs) -> Result<()> {
    let (params, run_cfg) = load_model(&args.ckpt, args.config.as_deref())?;
    let split = load_split(&args.data, &args.split_frac, args.split_seed)?;
    let scenes = scenes_for_choice(split, args.split);
    if scenes.len() < 2 {
        return Err(Error::invalid(format!(
            "uncertainty correlation needs at least 2 scenes, the selected split has {}",
            scenes.len()
        )));
    }
    let halved = run_cfg.train.polis_halved;
    let cfg = &run_cfg.snake;
    let rows: Vec<EvalRow> = maybe_par_map(scenes.len(), |i| {
        let scene = &scenes[i];
        let mc = mc_predict(
            &scene.model_input(),
            &params,
            cfg,
            args.samples,
            args.dropout,
            args.seed.wrapping_add(i as u64),
        )?;
        let (h, w) = (scene.image.shape()[0], scene.image.shape()[1]);
        Ok(EvalRow {
            scene_id: scene.id.clone(),
            polis_norm: polis(&mc.deterministic, &scene.truth, halved),
            polis_px: polis(
                &mc.deterministic.to_pixel_coords(h, w),
                &scene.truth.to_pixel_coords(h, w),
                halved,
            ),
            uncertainty: Some(mc.uncertainty),
        })
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let report = EvalReport::from_rows(rows)?;
    std::fs::write(&args.out, report.to_csv())?;
    let r_text = report
        .pearson_r
        .map(|r| format!("{r:.4}"))
        .unwrap_or_else(|| "undefined".to_string());
    println!(
        "uncertainty over {} scenes ({} samples, dropout {}): pearson r = {} -> {}",
        report.rows.len(),
        args.samples,
        args.dropout,
        r_text,
        args.out.display()
    );
    Ok(())
}

/// One sweep point: a label plus the config mutation it applies.
type AxisPoint = (String, Box<dyn Fn(&mut RunConfig)>);

fn axis_points(axis: AblationAxis) -> Vec<AxisPoint> {
    fn point(label: impl Into<String>, f: impl Fn(&mut RunConfig) + 'static) -> AxisPoint {
        (label.into(), Box::new(f))
    }
    match axis {
        AblationAxis::Loss => [LossKind::L1, LossKind::L2, LossKind::Dtw, LossKind::SoftDtw]
            .into_iter()
            .map(|kind| point(kind.to_string(), move |c: &mut RunConfig| c.snake.loss.kind = kind))
            .collect(),
        AblationAxis::Vertices => [16usize, 32, 64, 128, 256]
            .into_iter()
            .map(|v| point(v.to_string(), move |c: &mut RunConfig| c.snake.vertices = v))
            .collect(),
        AblationAxis::Iterations => (2usize..=7)
            .map(|t| point(t.to_string(), move |c: &mut RunConfig| c.snake.iterations = t))
            .collect(),
        AblationAxis::Coord => [true, false]
            .into_iter()
            .map(|b| point(b.to_string(), move |c: &mut RunConfig| c.snake.use_coord_features = b))
            .collect(),
        AblationAxis::Gradstop => [true, false]
            .into_iter()
            .map(|b| point(b.to_string(), move |c: &mut RunConfig| c.snake.gradient_stopping = b))
            .collect(),
        AblationAxis::Deepsup => [true, false]
            .into_iter()
            .map(|b| point(b.to_string(), move |c: &mut RunConfig| c.snake.deep_supervision = b))
            .collect(),
        AblationAxis::Shared => [true, false]
            .into_iter()
            .map(|b| point(b.to_string(), move |c: &mut RunConfig| c.snake.shared_weights = b))
            .collect(),
    }
}

pub fn cmd_ablate(args: &AblateArgs) -> Result<()> {
    let base_cfg = RunConfig::load(&args.config)?;
    let split = load_split(&args.data, &args.split_frac, args.split_seed)?;
    if split.test.is_empty() {
        return Err(Error::invalid("ablation needs a non-empty test split"));
    }
    std::fs::create_dir_all(&args.out)?;

    let mut summary = String::from("value,test_polis_px\n");
    for (label, mutate) in axis_points(args.axis) {
        let mut cfg = base_cfg.clone();
        mutate(&mut cfg);
        cfg.validate()?;
        println!("[{}={}] training...", args.axis, label);
        let run_dir = args.out.join(format!("run_{label}"));
        std::fs::create_dir_all(&run_dir)?;
        let result = train(&split.train, &split.val, &cfg.snake, &cfg.train, None);
        let polis_px = match result {
            Ok(out) => {
                save_checkpoint(&out.params, run_dir.join("model.ckpt"))?;
                std::fs::write(run_dir.join("log.csv"), log_to_csv(&out.log))?;
                if out.diverged.is_some() {
                    f64::NAN
                } else {
                    let rows = eval_rows(&split.test, &out.params, &cfg)?;
                    EvalReport::from_rows(rows)?.mean_polis_px
                }
            }
            Err(Error::NonFiniteGradient(_)) => f64::NAN,
            Err(e) => return Err(e),
        };
        println!("[{}={}] test polis = {polis_px:.4} px", args.axis, label);
        summary.push_str(&format!("{label},{polis_px}\n"));
    }
    let summary_path = args.out.join("summary.csv");
    std::fs::write(&summary_path, summary)?;
    println!("summary -> {}", summary_path.display());
    Ok(())
}

pub fn write_default_config(path: &PathBuf) -> Result<()> {
    std::fs::write(path, RunConfig::default().to_text())?;
    println!("default config -> {}", path.display());
    Ok(())
}
