//! Study reporting: side-by-side base/optimized scenario tables, CSV
//! emission, and the key=value run summary.

use crate::loss::LossBreakdown;
use crate::planner::DGPlanResult;
use crate::powerflow::LimitReport;

/// One scenario's headline numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioColumn {
    pub label: String,
    pub line_loss_kw: f64,
    pub transformer_loss_kw: f64,
    pub total_loss_kw: f64,
    pub load_power_kw: f64,
    pub loss_percent: f64,
    pub min_v_pu: f64,
    pub max_v_pu: f64,
}

impl ScenarioColumn {
    /// Build a column from raw numbers; the loss percentage is derived, not
    /// taken on faith.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        label: &str,
        line_loss_kw: f64,
        transformer_loss_kw: f64,
        total_loss_kw: f64,
        load_power_kw: f64,
        min_v_pu: f64,
        max_v_pu: f64,
    ) -> Self {
        let loss_percent = if load_power_kw > 0.0 {
            100.0 * total_loss_kw / load_power_kw
        } else {
            0.0
        };
        ScenarioColumn {
            label: label.to_string(),
            line_loss_kw,
            transformer_loss_kw,
            total_loss_kw,
            load_power_kw,
            loss_percent,
            min_v_pu,
            max_v_pu,
        }
    }

    pub fn from_breakdown(label: &str, loss: &LossBreakdown, limits: &LimitReport) -> Self {
        ScenarioColumn::from_parts(
            label,
            loss.line_loss_kw,
            loss.transformer_loss_kw,
            loss.total_loss_kw,
            loss.load_power_kw,
            limits.min_v_pu,
            limits.max_v_pu,
        )
    }
}

/// Base case against optimized case, with the headline deltas.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioReport {
    pub base: ScenarioColumn,
    pub optimized: ScenarioColumn,
    pub loss_reduction_kw: f64,
    /// Percentage-point drop in the loss share of served load.
    pub loss_reduction_points: f64,
}

impl ScenarioReport {
    pub fn new(base: ScenarioColumn, optimized: ScenarioColumn) -> Self {
        let loss_reduction_kw = base.total_loss_kw - optimized.total_loss_kw;
        let loss_reduction_points = base.loss_percent - optimized.loss_percent;
        ScenarioReport { base, optimized, loss_reduction_kw, loss_reduction_points }
    }
}

/// Summarize a finished sizing run as a two-column comparison.
pub fn compare_report(result: &DGPlanResult) -> ScenarioReport {
    ScenarioReport::new(
        ScenarioColumn::from_breakdown("base", &result.base_loss, &result.base_limits),
        ScenarioColumn::from_breakdown(
            "optimized",
            &result.optimized_loss,
            &result.optimized_limits,
        ),
    )
}

/// Format a number with nine significant digits, plain decimal notation.
/// Reparsing the text recovers the value to within half a unit in the ninth
/// digit, which is the precision contract for every CSV this crate emits.
pub fn csv_number(value: f64) -> String {
    if value == 0.0 || !value.is_finite() {
        return format!("{value}");
    }
    let magnitude = value.abs().log10().floor() as i32;
    let decimals = (8 - magnitude).max(0) as usize;
    format!("{value:.decimals$}")
}

/// Render the comparison as `metric,base,optimized` CSV. The reduction rows
/// only have an optimized value; their base cell is empty.
pub fn to_csv(report: &ScenarioReport) -> String {
    let mut out = String::from("metric,base,optimized\n");
    let rows: [(&str, f64, f64); 7] = [
        ("line_loss_kw", report.base.line_loss_kw, report.optimized.line_loss_kw),
        (
            "transformer_loss_kw",
            report.base.transformer_loss_kw,
            report.optimized.transformer_loss_kw,
        ),
        ("total_loss_kw", report.base.total_loss_kw, report.optimized.total_loss_kw),
        ("load_power_kw", report.base.load_power_kw, report.optimized.load_power_kw),
        ("loss_percent", report.base.loss_percent, report.optimized.loss_percent),
        ("min_v_pu", report.base.min_v_pu, report.optimized.min_v_pu),
        ("max_v_pu", report.base.max_v_pu, report.optimized.max_v_pu),
    ];
    for (metric, base, optimized) in rows {
        out.push_str(&format!("{metric},{},{}\n", csv_number(base), csv_number(optimized)));
    }
    out.push_str(&format!("loss_reduction_kw,,{}\n", csv_number(report.loss_reduction_kw)));
    out.push_str(&format!(
        "loss_reduction_points,,{}\n",
        csv_number(report.loss_reduction_points)
    ));
    out
}

/// Machine-readable run summary, one `key=value` per line. The wall time is
/// the only line that varies between identical runs, so callers that diff
/// artifacts can strip it.
pub fn run_summary(result: &DGPlanResult, wall_time_s: Option<f64>) -> String {
    let mut out = String::new();
    out.push_str(&format!("engine={}\n", result.engine_name));
    out.push_str(&format!("seed={}\n", result.seed));
    out.push_str(&format!("evaluations={}\n", result.evaluations));
    out.push_str(&format!("iterations={}\n", result.iterations));
    out.push_str(&format!("best_fitness={}\n", csv_number(result.best_fitness)));
    for (id, capacity) in result.dg_ids.iter().zip(&result.capacities_kw) {
        out.push_str(&format!("dg.{id}.capacity_kw={}\n", csv_number(*capacity)));
    }
    out.push_str(&format!(
        "base_total_loss_kw={}\n",
        csv_number(result.base_loss.total_loss_kw)
    ));
    out.push_str(&format!(
        "optimized_total_loss_kw={}\n",
        csv_number(result.optimized_loss.total_loss_kw)
    ));
    out.push_str(&format!(
        "loss_reduction_kw={}\n",
        csv_number(result.base_loss.total_loss_kw - result.optimized_loss.total_loss_kw)
    ));
    if let Some(seconds) = wall_time_s {
        out.push_str(&format!("wall_time_s={seconds:.3}\n"));
    }
    out
}
