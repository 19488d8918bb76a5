use std::path::PathBuf;

use anyhow::Context;
use swada_core::io::{simulation_csv, simulation_json, Provenance};
use swada_core::simulation::{run_scenario, PrevalenceScheme, SimulationConfig};
use swada_core::Error;

/// Environment variable consulted for the seed when neither the flag nor
/// the configuration file sets one.
pub const SEED_ENV: &str = "SWADA_SEED";

#[derive(clap::Args)]
pub struct Args {
    /// JSON file with `base` scenario settings and optional `grid` axes.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of studies; a comma list becomes a grid axis.
    #[arg(long, value_delimiter = ',')]
    k: Vec<usize>,
    /// const_50, const_25, unif_30_70, unif_10_90 or tri_10_50.
    #[arg(long, value_delimiter = ',')]
    prevalence: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    tau1: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    delta: Vec<f64>,
    /// Interaction heterogeneity SD; defaults to tau1 / 2.
    #[arg(long)]
    tau2: Option<f64>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    uisd: Option<f64>,
    /// Comma-separated subset of methods, e.g. da_re,ad_re,swada_interaction_re.
    #[arg(long, value_delimiter = ',')]
    methods: Vec<String>,
    /// Worker threads; defaults to all cores.
    #[arg(long)]
    threads: Option<usize>,
    /// Directory receiving metrics.json and metrics.csv.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

fn set_axis<T: Clone>(values: &[T], base: &mut T, axis: &mut Vec<T>) {
    match values {
        [] => {}
        [one] => {
            *base = one.clone();
            axis.clear();
        }
        many => *axis = many.to_vec(),
    }
}

/// Builds the resolved configuration. The seed comes from the flag, then
/// the file, then the environment, then the built-in default.
pub fn resolve(args: &Args) -> anyhow::Result<SimulationConfig> {
    let (mut cfg, file_seed) = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| path.display().to_string())
                .map_err(|e| anyhow::Error::new(Error::Io(format!("{e:#}"))))?;
            let cfg = SimulationConfig::from_json(&text)?;
            let raw: serde_json::Value =
                serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
            let has_seed = raw.pointer("/base/seed").is_some();
            (cfg, has_seed)
        }
        None => (SimulationConfig::default(), false),
    };
    let base = &mut cfg.base;
    let grid = &mut cfg.grid;
    set_axis(&args.k, &mut base.k, &mut grid.k);
    let schemes = args
        .prevalence
        .iter()
        .map(|s| {
            PrevalenceScheme::parse(s)
                .ok_or_else(|| Error::Config(format!("unknown prevalence scheme `{s}`")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    set_axis(
        &schemes,
        &mut base.prevalence_scheme,
        &mut grid.prevalence_scheme,
    );
    set_axis(&args.tau1, &mut base.tau1, &mut grid.tau1);
    set_axis(&args.delta, &mut base.delta, &mut grid.delta);
    if let Some(t) = args.tau2 {
        base.tau2 = Some(t);
    }
    if let Some(r) = args.reps {
        base.reps = r;
    }
    if let Some(u) = args.uisd {
        base.uisd = u;
    }
    if !args.methods.is_empty() {
        base.methods = Some(args.methods.clone());
    }
    if let Some(s) = args.seed {
        base.seed = s;
    } else if !file_seed {
        if let Ok(v) = std::env::var(SEED_ENV) {
            base.seed = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}=`{v}` is not an integer")))?;
        }
    }
    Ok(cfg)
}

pub fn run(args: Args) -> anyhow::Result<()> {
    let cfg = resolve(&args)?;
    let scenarios = cfg.expand();
    for s in &scenarios {
        s.validate()?;
    }
    let bytes = serde_json::to_vec(&cfg)?;
    let prov = Provenance::new(cfg.base.seed, &bytes);
    let mut metrics = Vec::with_capacity(scenarios.len());
    for s in &scenarios {
        eprintln!("scenario {} ({} replicates)", s.label(), s.reps);
        metrics.push(run_scenario(s, args.threads)?);
    }
    std::fs::create_dir_all(&args.out_dir)
        .map_err(|e| Error::Io(format!("{}: {e}", args.out_dir.display())))?;
    for (name, text) in [
        ("metrics.json", simulation_json(&prov, &metrics)),
        ("metrics.csv", simulation_csv(&prov, &metrics)),
    ] {
        let path = args.out_dir.join(name);
        std::fs::write(&path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}
