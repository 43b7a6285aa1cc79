//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on runtime errors.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use serde_json::{json, Map, Value};

use crate::config::{parse_config, parse_override, parse_scene, RunConfig, KEYS};
use crate::error::{Error, Result};
use crate::grid::ImageGrid;
use crate::io::{read_image, read_labels, write_labels, write_map, MapEncoding};
use crate::model::synthesize;
use crate::pipeline::{decompose, dice_report, generalization_probe, segment, FitReport, IntensityTransform};
use crate::var_loss::LossBreakdown;

#[derive(Debug, Parser)]
#[command(name = "bayeseg", version, about = "Variational image decomposition and segmentation")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Configuration file of `key = value` lines
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base random seed (overrides the config)
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for output files
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    /// Number of classes (overrides the config)
    #[arg(long, global = true)]
    k: Option<usize>,
    /// Weight of the variational loss (overrides the config)
    #[arg(long, global = true)]
    lambda: Option<f64>,
    /// Extra `key=value` override; repeatable
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Also write 16-bit PNG previews of every map
    #[arg(long, global = true)]
    png: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Split an image into contour and basis
    Decompose { image: PathBuf },
    /// Segment an image, supervised when labels are given
    Segment {
        image: PathBuf,
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Per-class and average Dice of two label images
    Evaluate { pred: PathBuf, gt: PathBuf },
    /// Write a synthetic scene (`standard`, `clean` or a scene file)
    Synthesize { scene: String },
    /// Compare Dice drops with and without the variational loss
    Probe {
        scene: String,
        /// identity, invert, gamma or gamma:<value>
        #[arg(long, default_value = "gamma")]
        transform: String,
    },
}

fn help_footer() -> String {
    let defaults = RunConfig::default().dump();
    let mut s = String::from("Configuration keys (defaults):\n");
    for ((key, doc), line) in KEYS.iter().zip(defaults.lines()) {
        let value = line.split_once('=').map(|(_, v)| v.trim()).unwrap_or("");
        s.push_str(&format!("  {key:<22} {value:<10} {doc}\n"));
    }
    s
}

/// Runs the CLI on `argv`, writing to the process streams.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(argv, &mut stdout.lock(), &mut stderr.lock())
}

/// As [`run`], with explicit output streams.
pub fn run_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let command = Cli::command().after_help(help_footer());
    let cli = match command
        .try_get_matches_from(argv)
        .and_then(|m| Cli::from_arg_matches(&m))
    {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 {
                write!(out, "{text}")
            } else {
                write!(err, "{text}")
            };
            return code;
        }
    };
    match execute(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            2
        }
    }
}

fn effective_config(c: &Common) -> Result<RunConfig> {
    let text = match &c.config {
        Some(p) => fs::read_to_string(p).map_err(|source| Error::Io {
            path: p.clone(),
            source,
        })?,
        None => String::new(),
    };
    let mut overrides = c
        .set
        .iter()
        .map(|s| parse_override(s))
        .collect::<Result<Vec<_>>>()?;
    if let Some(s) = c.seed {
        overrides.push(("seed".into(), s.to_string()));
    }
    if let Some(k) = c.k {
        overrides.push(("k".into(), k.to_string()));
    }
    if let Some(l) = c.lambda {
        overrides.push(("lambda".into(), l.to_string()));
    }
    parse_config(&text, &overrides)
}

struct Outputs<'a> {
    dir: &'a Path,
    png: bool,
}

impl Outputs<'_> {
    fn map(&self, name: &str, grid: &ImageGrid) -> Result<()> {
        write_map(&self.dir.join(format!("{name}.bsg")), grid, MapEncoding::Raw)?;
        if self.png {
            write_map(&self.dir.join(format!("{name}.png")), grid, MapEncoding::Png16)?;
        }
        Ok(())
    }

    fn text(&self, name: &str, body: &str) -> Result<()> {
        let p = self.dir.join(name);
        fs::write(&p, body).map_err(|source| Error::Io { path: p, source })
    }
}

/// Rounds to 9 significant digits for the metrics report.
fn sig9(v: f64) -> Value {
    if !v.is_finite() {
        return Value::Null;
    }
    let r: f64 = format!("{v:.8e}").parse().expect("formatted float parses");
    json!(r)
}

fn breakdown_json(l: &LossBreakdown) -> Value {
    let pairs = [
        ("L_y", l.l_y),
        ("L_mu_z", l.l_mu_z),
        ("L_sigma_z", l.l_sigma_z),
        ("L_mu_x", l.l_mu_x),
        ("L_sigma_x", l.l_sigma_x),
        ("L_mu_m", l.l_mu_m),
        ("L_sigma_m", l.l_sigma_m),
        ("L_var", l.l_var),
        ("L_ce", l.l_ce),
        ("total", l.total),
    ];
    Value::Object(pairs.iter().map(|(k, v)| (k.to_string(), sig9(*v))).collect())
}

fn report_json(command: &str, cfg: &RunConfig, r: &FitReport) -> Map<String, Value> {
    let totals: Vec<f64> = r.history.iter().map(|l| l.total).collect();
    let ma = r.moving_average();
    let mut m = Map::new();
    m.insert("command".into(), json!(command));
    m.insert("k".into(), json!(cfg.hyper.k));
    m.insert("seed".into(), json!(cfg.fit.seed));
    m.insert("sweeps".into(), json!(r.sweeps));
    m.insert("stop".into(), json!(r.stop));
    m.insert(
        "final".into(),
        r.final_loss().map(breakdown_json).unwrap_or(Value::Null),
    );
    m.insert(
        "history".into(),
        json!({
            "first_total": sig9(totals[0]),
            "min_total": sig9(totals.iter().cloned().fold(f64::INFINITY, f64::min)),
            "last_total": sig9(*totals.last().unwrap()),
            "last_moving_average": ma.last().map(|v| sig9(*v)).unwrap_or(Value::Null),
        }),
    );
    m
}

fn write_json(o: &Outputs<'_>, name: &str, m: Map<String, Value>) -> Result<()> {
    let mut s = serde_json::to_string_pretty(&Value::Object(m)).expect("json values serialise");
    s.push('\n');
    o.text(name, &s)
}

fn read_scene_arg(arg: &str, k: usize) -> Result<crate::model::SceneSpec> {
    let p = Path::new(arg);
    if p.is_file() {
        let text = fs::read_to_string(p).map_err(|source| Error::Io {
            path: p.to_path_buf(),
            source,
        })?;
        parse_scene(&text, k)
    } else {
        parse_scene(arg, k)
    }
}

fn execute(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    let cfg = effective_config(&cli.common)?;
    let dir = &cli.common.out_dir;
    if !matches!(cli.command, Command::Evaluate { .. }) {
        fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.clone(),
            source,
        })?;
    }
    let o = Outputs {
        dir,
        png: cli.common.png,
    };
    let console = |out: &mut dyn Write, s: String| {
        writeln!(out, "{s}").map_err(|source| Error::Io {
            path: PathBuf::from("<stdout>"),
            source,
        })
    };
    match &cli.command {
        Command::Decompose { image } => {
            let y = read_image(image)?;
            let d = decompose(&y, &cfg.hyper, &cfg.fit)?;
            o.map("contour_mean", &d.contour.mean[0])?;
            o.map("contour_var", &d.contour.variance(0))?;
            o.map("basis_mean", &d.basis_mean)?;
            o.map("rho_mean", &d.basis_precision)?;
            o.map("upsilon_mean", &d.line)?;
            o.text("config.txt", &cfg.dump())?;
            write_json(&o, "metrics.json", report_json("decompose", &cfg, &d.report))?;
            console(out, format!("decompose: {} sweeps ({:?})", d.report.sweeps, d.report.stop))?;
        }
        Command::Segment { image, labels } => {
            let y = read_image(image)?;
            let gt = labels.as_deref().map(read_labels).transpose()?;
            let s = segment(&y, gt.as_ref(), &cfg.hyper, &cfg.fit)?;
            let st = &s.state;
            o.map("contour_mean", &st.q_x.mean[0])?;
            o.map("contour_var", &st.q_x.variance(0))?;
            o.map("basis_mean", &st.q_m.mean[0])?;
            o.map("rho_mean", &st.q_rho.mean(0))?;
            o.map("upsilon_mean", &st.q_upsilon.mean(0))?;
            for (c, w) in s.boundary.iter().enumerate() {
                o.map(&format!("omega_mean_{c}"), w)?;
            }
            write_labels(&dir.join("label_map.png"), &s.label_map)?;
            o.text("config.txt", &cfg.dump())?;
            let mut m = report_json("segment", &cfg, &s.report);
            m.insert("supervised".into(), json!(gt.is_some()));
            m.insert(
                "pi_mean".into(),
                Value::Array((0..s.probs.len()).map(|c| sig9(s.probs.params(c).mean())).collect()),
            );
            if let Some(gt) = &gt {
                let (per, avg) = dice_report(&s.label_map, gt, cfg.hyper.k)?;
                m.insert(
                    "dice".into(),
                    json!({"per_class": per.iter().map(|v| sig9(*v)).collect::<Vec<_>>(), "average": sig9(avg)}),
                );
            }
            write_json(&o, "metrics.json", m)?;
            console(out, format!("segment: {} sweeps ({:?})", s.report.sweeps, s.report.stop))?;
        }
        Command::Evaluate { pred, gt } => {
            let p = read_labels(pred)?;
            let g = read_labels(gt)?;
            let k = match cli.common.k {
                Some(k) => k,
                None => p.max().max(g.max()) as usize + 1,
            };
            let (per, avg) = dice_report(&p, &g, k)?;
            for (c, d) in per.iter().enumerate() {
                console(out, format!("class {c}: dice {d:.6}"))?;
            }
            console(out, format!("average dice {avg:.6}"))?;
        }
        Command::Synthesize { scene } => {
            let spec = read_scene_arg(scene, cfg.hyper.k)?;
            let s = synthesize(&spec, cfg.fit.seed)?;
            o.map("y", &s.y)?;
            o.map("gt_basis", &s.gt_basis)?;
            o.map("gt_contour", &s.gt_contour)?;
            write_labels(&dir.join("gt_label.png"), &s.gt_label)?;
            write_map(&dir.join("y.png"), &s.y, MapEncoding::Png16)?;
            console(out, format!("synthesize: {}x{} scene, k = {}", spec.width, spec.height, spec.k))?;
        }
        Command::Probe { scene, transform } => {
            let spec = read_scene_arg(scene, cfg.hyper.k)?;
            let t: IntensityTransform = transform.parse()?;
            let s = synthesize(&spec, cfg.fit.seed)?;
            let mut h = cfg.hyper.clone();
            h.k = spec.k;
            let r = generalization_probe(&s, t, &h, &cfg.fit)?;
            let arm = |a: &crate::pipeline::ProbeArm| {
                json!({"lambda": a.lambda, "dice_fit": sig9(a.dice_fit), "dice_source": sig9(a.dice_source),
                       "dice_target": sig9(a.dice_target), "gap": sig9(a.gap)})
            };
            let mut m = Map::new();
            m.insert("transform".into(), json!(r.transform));
            m.insert("with_prior".into(), arm(&r.with_prior));
            m.insert("without_prior".into(), arm(&r.without_prior));
            write_json(&o, "probe.json", m)?;
            console(
                out,
                format!(
                    "probe {}: gap with lambda={} {:.6}, gap with lambda=0 {:.6}",
                    r.transform, r.with_prior.lambda, r.with_prior.gap, r.without_prior.gap
                ),
            )?;
        }
    }
    Ok(())
}
