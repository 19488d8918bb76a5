use std::path::PathBuf;

use swada_core::diagnostics::{loo_influence, mismatch_for, WeightsSpec};
use swada_core::io::{read_csv_file, DiagnosticsReport};
use swada_core::{Error, Pooling, WeightScheme};

use crate::{emit, pooling, ModelArg, OutputFormat, TauArg};

#[derive(clap::Args)]
pub struct Args {
    #[arg(long)]
    input: PathBuf,
    /// `iv` for separate inverse-variance pools, or a common-weight scheme.
    #[arg(long, default_value = "iv")]
    weights_da: String,
    /// `iv` for inverse-variance weights on the contrasts, or a scheme.
    #[arg(long, default_value = "iv")]
    weights_ad: String,
    /// Pooling model used by `iv` weights.
    #[arg(long, value_enum, default_value = "ce")]
    model: ModelArg,
    #[arg(long = "tau-estimator", value_enum, default_value = "reml")]
    tau_estimator: TauArg,
    /// Add leave-one-out influence of each study on the mismatch.
    #[arg(long)]
    loo: bool,
    #[arg(long, value_enum, default_value = "json")]
    output: OutputFormat,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn spec(name: &str, pool: Pooling) -> Result<WeightsSpec, Error> {
    if name.eq_ignore_ascii_case("iv") {
        return Ok(WeightsSpec::InverseVariance(pool));
    }
    WeightScheme::parse(name)
        .filter(|s| WeightScheme::COMMON.contains(s))
        .map(WeightsSpec::Scheme)
        .ok_or_else(|| {
            Error::Config(format!(
                "unknown weights `{name}`; use iv or a common-weight scheme"
            ))
        })
}

fn csv(report: &DiagnosticsReport) -> String {
    let m = &report.mismatch;
    let mut out = format!(
        "# delta_hat: {:?}\n# var_delta: {:?}\n",
        m.delta_hat, m.var_delta
    );
    out.push_str("study_id,d_a,d_b,contribution");
    if report.leave_one_out.is_some() {
        out.push_str(",loo_variance_ratio,loo_delta_shift");
    }
    out.push('\n');
    for (j, id) in report.study_ids.iter().enumerate() {
        out.push_str(&format!(
            "{id},{:?},{:?},{:?}",
            m.d_matrix[2 * j],
            m.d_matrix[2 * j + 1],
            m.per_study_contribution[j]
        ));
        if let Some(l) = &report.leave_one_out {
            out.push_str(&format!(
                ",{:?},{:?}",
                l.entries[j].variance_ratio, l.entries[j].delta_shift
            ));
        }
        out.push('\n');
    }
    out
}

pub fn run(args: Args) -> anyhow::Result<()> {
    let data = read_csv_file(&args.input)?.data;
    let pool = pooling(args.model, args.tau_estimator);
    let da = spec(&args.weights_da, pool)?;
    let ad = spec(&args.weights_ad, pool)?;
    let (full, loo) = if args.loo {
        let r = loo_influence(&data, da, ad)?;
        (r.full.clone(), Some(r))
    } else {
        (mismatch_for(&data, da, ad)?, None)
    };
    let ids = data.studies.iter().map(|s| s.study_id.clone()).collect();
    let report = DiagnosticsReport::new(ids, full, loo);
    let text = match args.output {
        OutputFormat::Json => serde_json::to_string_pretty(&report)?,
        OutputFormat::Csv => csv(&report),
    };
    emit(args.out.as_ref(), &text)
}
