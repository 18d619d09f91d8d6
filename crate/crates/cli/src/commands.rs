use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use detcal_core::ingest::{
    load_ground_truth, load_predictions, Dataset, GtFormat, InputKind, PredictionDump,
};
use detcal_core::matching::{
    build_evaluation_set_with_matches, write_match_lines, MatchConfig, MatchMode, MatchResult,
};
use detcal_core::metrics::{BinningConfig, MetricsReport, ReportOptions};
use detcal_core::postprocess::{run_pipeline, PostProcessConfig};
use detcal_core::recal::{self, linear_grid, RecalTransform, SWEEP_METRICS};
use detcal_core::report::{self, RunArtifact};
use detcal_core::synth::{self, Miscalibration, SyntheticConfig};
use detcal_core::{EvaluationSet, ImageId};
use serde_json::{json, Value};

use crate::error::{CliError, CliResult};
use crate::{
    CompareArgs, EvaluateArgs, GtFormatArg, MatchingArg, PipelineArgs, PredKindArg, Scenario,
    SweepArgs, SynthArgs, Toggle,
};

struct PipelineConfig {
    gt_format: GtFormat,
    pred_kind: InputKind,
    postprocess: PostProcessConfig,
    matching: MatchConfig,
    binning: BinningConfig,
}

impl PipelineConfig {
    fn from_args(p: &PipelineArgs) -> CliResult<Self> {
        if p.label.trim().is_empty() {
            return Err(CliError::Config("--label must not be empty".into()));
        }
        let postprocess = PostProcessConfig {
            enabled: p.postprocess == Toggle::On,
            score_threshold: p.score_thresh,
            nms_iou_threshold: p.nms_iou,
            top_k: p.top_k,
        };
        postprocess.validate()?;
        let matching = MatchConfig {
            iou_threshold: p.iou_thresh,
            mode: match p.matching {
                MatchingArg::OneToOne => MatchMode::OneToOne,
                MatchingArg::ManyToOne => MatchMode::ManyToOne,
            },
        };
        matching.validate()?;
        Ok(PipelineConfig {
            gt_format: match p.gt_format {
                GtFormatArg::Coco => GtFormat::Coco,
                GtFormatArg::Native => GtFormat::Native,
            },
            pred_kind: match p.pred_kind {
                PredKindArg::Probs => InputKind::Probs,
                PredKindArg::Logits => InputKind::Logits,
            },
            postprocess,
            matching,
            binning: BinningConfig::new(p.bins)?,
        })
    }

    /// Everything needed to re-run the pipeline, minus the output location.
    fn echo(&self, p: &PipelineArgs) -> Value {
        json!({
            "gt": p.gt.display().to_string(),
            "gt_format": self.gt_format,
            "pred": p.pred.display().to_string(),
            "pred_kind": self.pred_kind,
            "postprocess": self.postprocess,
            "matching": self.matching,
            "binning": self.binning,
            "label": p.label,
        })
    }
}

struct Loaded {
    dataset: Dataset,
    dump: PredictionDump,
    raw_clamped: usize,
    set: EvaluationSet,
    matches: Vec<(ImageId, MatchResult)>,
}

fn load(p: &PipelineArgs, cfg: &PipelineConfig) -> CliResult<Loaded> {
    let dataset = load_ground_truth(&p.gt, cfg.gt_format)
        .map_err(|e| CliError::Input(format!("{}: {e}", p.gt.display())))?;
    let raw = load_predictions(&p.pred, dataset.num_classes(), cfg.pred_kind)
        .map_err(|e| CliError::Input(format!("{}: {e}", p.pred.display())))?;
    let dump = run_pipeline(&raw, &cfg.postprocess);
    let (set, matches) = build_evaluation_set_with_matches(&dataset, &dump, &cfg.matching)?;
    if set.is_empty() {
        return Err(CliError::EmptySet);
    }
    Ok(Loaded {
        dataset,
        dump,
        raw_clamped: raw.clamped_boxes(),
        set,
        matches,
    })
}

fn write(dir: &Path, name: &str, contents: &str) -> CliResult<()> {
    let path = dir.join(name);
    report::write_file(&path, contents)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::Input(format!("{}: {e}", dir.display())))
}

fn to_json(value: &impl serde::Serialize) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| x.to_string())
}

pub fn evaluate(args: &EvaluateArgs) -> CliResult<()> {
    let p = &args.pipeline;
    let cfg = PipelineConfig::from_args(p)?;
    if args.entropy_bins == 0 {
        return Err(CliError::Config("--entropy-bins must be at least 1".into()));
    }
    let loaded = load(p, &cfg)?;

    let mut provenance = cfg.echo(p);
    provenance["command"] = json!("evaluate");
    provenance["version"] = json!(env!("CARGO_PKG_VERSION"));
    provenance["entropy_bins"] = json!(args.entropy_bins);
    provenance["ood"] = json!(args.ood);
    provenance["prediction_source"] = json!(loaded.dump.source_tag());
    provenance["clamped_boxes"] = json!({
        "gt": loaded.dataset.clamped_boxes(),
        "pred": loaded.raw_clamped,
    });
    let opts = ReportOptions {
        binning: cfg.binning,
        entropy_bins: args.entropy_bins,
        out_of_distribution: args.ood,
    };
    let report = MetricsReport::compute(
        &loaded.set,
        &loaded.dataset,
        &loaded.dump,
        &opts,
        provenance,
    )?;
    let run = RunArtifact::new(p.label.clone(), report)?;

    create_dir(&p.out)?;
    write(&p.out, "report.json", &to_json(&run))?;
    for curve in &run.report.curves {
        let name = curve.variant.name();
        write(
            &p.out,
            &format!("curve_{name}.csv"),
            &report::curves_to_csv(std::slice::from_ref(curve)),
        )?;
        write(
            &p.out,
            &format!("plot_{name}.svg"),
            &report::render_calibration_plot(curve),
        )?;
    }
    if let Some(h) = &run.report.entropy_histogram {
        write(
            &p.out,
            "entropy_histogram.csv",
            &report::histogram_to_csv(h),
        )?;
        write(
            &p.out,
            "entropy_histogram.svg",
            &report::render_entropy_panels(std::slice::from_ref(&run)),
        )?;
    }
    if let Some(path) = &args.dump_matches {
        let file = fs::File::create(path)
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        let mut out = BufWriter::new(file);
        write_match_lines(&mut out, &loaded.matches)?;
        out.flush()?;
    }

    let r = &run.report;
    let lines = [
        ("label", run.label.clone()),
        ("records", loaded.set.len().to_string()),
        ("matched", r.counts.matched.to_string()),
        ("unmatched_pred", r.counts.unmatched_pred.to_string()),
        ("missing_gt", r.counts.missing_gt.to_string()),
        ("ap50", fmt_opt(r.ap50)),
        ("nll", r.nll.to_string()),
        ("brier", r.brier.to_string()),
        ("tce", r.tce.to_string()),
        ("mce", r.mce.to_string()),
        ("dtce", fmt_opt(r.dtce)),
        ("dmce", fmt_opt(r.dmce)),
    ];
    let mut stdout = std::io::stdout().lock();
    for (k, v) in lines {
        writeln!(stdout, "{k}={v}")?;
    }
    Ok(())
}

pub fn compare(args: &CompareArgs) -> CliResult<()> {
    let runs = args
        .runs
        .iter()
        .map(|dir| {
            let path = dir.join("report.json");
            let bytes =
                fs::read(&path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
            serde_json::from_slice::<RunArtifact>(&bytes)
                .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
        })
        .collect::<CliResult<Vec<_>>>()?;
    let cmp = report::render_comparison(&runs).map_err(|e| match e {
        detcal_core::Error::DimensionMismatch { .. } => {
            CliError::Config(format!("runs disagree on the number of classes: {e}"))
        }
        other => other.into(),
    })?;
    create_dir(&args.out)?;
    write(&args.out, "comparison.csv", &cmp.csv)?;
    write(&args.out, "comparison.md", &cmp.markdown)?;
    write(&args.out, "entropy_comparison.csv", &cmp.entropy_csv)?;
    write(&args.out, "entropy_comparison.svg", &cmp.entropy_svg)?;
    print!("{}", cmp.markdown);
    Ok(())
}

fn parse_grid(flag: &str, text: &str) -> CliResult<Vec<f64>> {
    let parts: Vec<&str> = text.split(':').collect();
    let bad = || CliError::Config(format!("{flag} expects START:STOP:STEP, got {text:?}"));
    let [a, b, s] = parts.as_slice() else {
        return Err(bad());
    };
    let parse = |x: &str| x.trim().parse::<f64>().map_err(|_| bad());
    Ok(linear_grid(parse(a)?, parse(b)?, parse(s)?)?)
}

pub fn sweep(args: &SweepArgs) -> CliResult<()> {
    let p = &args.pipeline;
    let cfg = PipelineConfig::from_args(p)?;
    let mut families: Vec<(&str, Vec<RecalTransform>)> = Vec::new();
    if let Some(text) = &args.grid_bg_weight {
        let grid = parse_grid("--grid-bg-weight", text)?;
        families.push((
            "background_weight",
            grid.into_iter()
                .map(RecalTransform::BackgroundWeight)
                .collect(),
        ));
    }
    if let Some(text) = &args.grid_temperature {
        let grid = parse_grid("--grid-temperature", text)?;
        families.push((
            "temperature",
            grid.into_iter()
                .map(RecalTransform::TemperatureScale)
                .collect(),
        ));
    }
    if families.is_empty() {
        return Err(CliError::Config(
            "empty grid: give --grid-bg-weight and/or --grid-temperature".into(),
        ));
    }
    for (_, grid) in &families {
        for t in grid {
            t.validate()?;
        }
    }
    let loaded = load(p, &cfg)?;

    let mut tables = serde_json::Map::new();
    let mut outputs = Vec::new();
    for (name, grid) in &families {
        let table = recal::sweep(&loaded.set, grid, &cfg.binning, args.recal_skip_missing)?;
        outputs.push((
            *name,
            report::sweep_to_csv(&table),
            report::render_sweep_plot(&table),
        ));
        tables.insert(
            name.to_string(),
            serde_json::to_value(&table).expect("serializable"),
        );
    }
    let mut config = cfg.echo(p);
    config["command"] = json!("sweep");
    config["version"] = json!(env!("CARGO_PKG_VERSION"));
    config["grid_bg_weight"] = json!(args.grid_bg_weight);
    config["grid_temperature"] = json!(args.grid_temperature);
    config["recal_skip_missing"] = json!(args.recal_skip_missing);
    let doc = json!({ "config": config, "tables": tables });

    create_dir(&p.out)?;
    for (name, csv, svg) in &outputs {
        write(&p.out, &format!("sweep_{name}.csv"), csv)?;
        write(&p.out, &format!("sweep_{name}.svg"), svg)?;
    }
    write(&p.out, "sweep.json", &to_json(&doc))?;

    let mut stdout = std::io::stdout().lock();
    for (name, table) in &tables {
        for metric in SWEEP_METRICS {
            if let Some(param) = table["argmin"]
                .get(metric)
                .and_then(|row| row["param"].as_f64())
            {
                writeln!(stdout, "{name}.argmin.{metric}={param}")?;
            }
        }
    }
    Ok(())
}

fn parse_objects(text: &str) -> CliResult<(usize, usize)> {
    let bad = || CliError::Config(format!("--objects expects MIN:MAX, got {text:?}"));
    let (a, b) = text.split_once(':').ok_or_else(bad)?;
    Ok((
        a.trim().parse().map_err(|_| bad())?,
        b.trim().parse().map_err(|_| bad())?,
    ))
}

fn parse_miscal(text: &str) -> CliResult<Miscalibration> {
    let bad = || {
        CliError::Config(format!(
            "--miscal expects none, temp:T or bg:B, got {text:?}"
        ))
    };
    if text == "none" {
        return Ok(Miscalibration::None);
    }
    let (kind, value) = text.split_once(':').ok_or_else(bad)?;
    let value: f64 = value.trim().parse().map_err(|_| bad())?;
    match kind {
        "temp" => Ok(Miscalibration::Temperature(value)),
        "bg" => Ok(Miscalibration::BackgroundBias(value)),
        _ => Err(bad()),
    }
}

pub fn synth(args: &SynthArgs) -> CliResult<()> {
    let cfg = SyntheticConfig {
        seed: args.seed,
        num_images: args.images,
        num_classes: args.classes,
        objects_per_image: parse_objects(&args.objects)?,
        miscalibration: parse_miscal(&args.miscal)?,
        detector_noise: args.sigma,
        miss_rate: args.miss_rate,
        spurious_rate: args.spurious_rate,
        concentration: args.concentration,
        duplicates: args.duplicates,
    };
    let (dataset, dump, echo) = match args.scenario {
        Scenario::Standard => {
            let (d, p) = synth::generate(&cfg)?;
            (d, p, json!({ "scenario": "standard", "config": cfg }))
        }
        Scenario::TceBlind => {
            if args.records == 0 {
                return Err(CliError::Config("--records must be at least 1".into()));
            }
            let (d, p) = synth::make_tce_blind_instance(args.seed, args.records);
            (
                d,
                p,
                json!({ "scenario": "tce_blind", "seed": args.seed, "records": args.records }),
            )
        }
        Scenario::Duplicates => {
            if args.images == 0 {
                return Err(CliError::Config("--images must be at least 1".into()));
            }
            let (d, p) = synth::make_duplicate_rich_instance(args.seed, args.images);
            (
                d,
                p,
                json!({ "scenario": "duplicates", "seed": args.seed, "images": args.images }),
            )
        }
    };
    create_dir(&args.out)?;
    write(&args.out, "gt.json", &dataset.to_native_json())?;
    write(&args.out, "preds.json", &dump.to_native_json())?;
    write(&args.out, "synth.json", &to_json(&echo))?;
    let mut stdout = std::io::stdout().lock();
    writeln!(stdout, "images={}", dataset.images().len())?;
    writeln!(stdout, "annotations={}", dataset.num_annotations())?;
    writeln!(stdout, "detections={}", dump.len())?;
    Ok(())
}
