//! Central finite-difference check of the analytic adapter gradients.

use super::layers::AdapterLayer;
use super::Result;

/// Gradient magnitudes below this are treated as zero when forming
/// relative errors.
const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Parameter group holding the worst entry.
    pub worst_group: String,
    pub entries_checked: usize,
}

fn probe_loss(h: &[f64], target: &[f64]) -> f64 {
    0.5 * h.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
}

/// Compare analytic gradients of `0.5·‖h − target‖²` against central
/// differences for every trainable entry of the layer at `task`.
pub fn grad_check<L: AdapterLayer + Clone>(
    layer: &L,
    x: &[f64],
    task: usize,
    target: &[f64],
    epsilon: f64,
) -> Result<GradCheckReport> {
    assert!(epsilon > 0.0, "epsilon must be positive");
    let h = layer.forward(x, task)?;
    let grad_out: Vec<f64> = h.iter().zip(target).map(|(a, b)| a - b).collect();
    let analytic = layer.gradients(x, task, &grad_out)?;
    let names = layer.param_group_names();

    let mut probe = layer.clone();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_group: String::new(),
        entries_checked: 0,
    };
    for (g, group) in analytic.iter().enumerate() {
        for (j, &a) in group.iter().enumerate() {
            let original = probe.param_groups_mut(task)?[g][j];
            probe.param_groups_mut(task)?[g][j] = original + epsilon;
            let plus = probe_loss(&probe.forward(x, task)?, target);
            probe.param_groups_mut(task)?[g][j] = original - epsilon;
            let minus = probe_loss(&probe.forward(x, task)?, target);
            probe.param_groups_mut(task)?[g][j] = original;

            let numeric = (plus - minus) / (2.0 * epsilon);
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            report.entries_checked += 1;
            if err > report.max_relative_error || report.worst_group.is_empty() {
                report.max_relative_error = report.max_relative_error.max(err);
                report.worst_group = names[g].clone();
            }
        }
    }
    Ok(report)
}
