use boxrefine::weighting::build_spec;

use crate::config::RunConfig;
use crate::error::CliError;
use crate::output::fmt_f64;

/// Knot table as CSV with header `n,w`.
pub fn weights_csv(config: &RunConfig) -> Result<String, CliError> {
    let w = &config.weighting;
    let spec = build_spec(w.a, w.c, w.n_bins)?;
    let mut out = String::from("n,w\n");
    for (n, v) in spec.knots().iter().enumerate() {
        out.push_str(&format!("{n},{}\n", fmt_f64(*v)));
    }
    Ok(out)
}
