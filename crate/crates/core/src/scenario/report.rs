//! Run reports, their JSON encoding and the point table.

use std::io::{self, Write};

use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter};

use crate::action::{ActionConstants, FlowboxBounds, MatrixField};
use crate::centralizer::{CocycleResiduals, ReparamField};
use crate::constants::{ConditionAudit, FlowConstants, SeparationReport};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Comparison {
    #[serde(rename = "<")]
    Less,
    #[serde(rename = "<=")]
    AtMost,
    #[serde(rename = ">")]
    Greater,
    #[serde(rename = ">=")]
    AtLeast,
    #[serde(rename = "==")]
    Equal,
}

impl Comparison {
    pub fn holds(self, value: f64, threshold: f64) -> bool {
        match self {
            Self::Less => value < threshold,
            Self::AtMost => value <= threshold,
            Self::Greater => value > threshold,
            Self::AtLeast => value >= threshold,
            Self::Equal => value == threshold,
        }
    }
}

/// One named check. `passed` is always derived from `value` and `threshold`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Audit {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub comparison: Comparison,
    pub passed: bool,
}

impl Audit {
    pub fn new(name: &str, value: f64, comparison: Comparison, threshold: f64) -> Self {
        Self {
            name: name.to_string(),
            value,
            threshold,
            comparison,
            passed: comparison.holds(value, threshold),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StageError {
    pub stage: String,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SectionSummary {
    pub charts: usize,
    pub solves: usize,
    pub g_slope_min: f64,
    pub g_derivative_min: f64,
    pub contraction_rate_max: f64,
    /// Counts of per-iteration ratios in ten equal bins over `[0, 7/12 + 0.05]`
    /// followed by an overflow bin.
    pub rate_histogram: Vec<u64>,
    pub level_set_residual_max: f64,
    pub projection_constancy_max: f64,
    /// Largest observed `|tau(p) - tau(q)| / d(p, q)`; recorded only.
    pub tau_lipschitz_max: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Pass,
    AuditFailure,
    PipelineError,
}

impl RunStatus {
    pub fn exit_code(self) -> u8 {
        match self {
            Self::Pass => 0,
            Self::AuditFailure => 2,
            Self::PipelineError => 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunReport {
    pub scenario: String,
    pub kind: String,
    pub seed: u64,
    pub t0_rule: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub constants: Option<FlowConstants>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub condition_audit: Option<ConditionAudit>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sections: Option<SectionSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub separation: Option<SeparationReport>,
    pub separating_hypothesis: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub commutation_residual: Option<f64>,
    pub recovery: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub centralizer: Option<ReparamField>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cocycle: Option<CocycleResiduals>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub action_constants: Option<ActionConstants>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flowbox: Option<FlowboxBounds>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub action_centralizer: Option<MatrixField>,
    pub audits: Vec<Audit>,
    pub errors: Vec<StageError>,
    pub status: RunStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_time: Option<f64>,
}

impl RunReport {
    pub fn audit(&self, name: &str) -> Option<&Audit> {
        self.audits.iter().find(|a| a.name == name)
    }

    pub fn normalize(&mut self) {
        self.wall_time = None;
    }

    pub fn to_json(&self) -> String {
        let mut out = Vec::new();
        let mut ser =
            serde_json::Serializer::with_formatter(&mut out, SignificantDigits::default());
        self.serialize(&mut ser)
            .expect("report serialization is infallible");
        out.push(b'\n');
        String::from_utf8(out).expect("serde_json emits UTF-8")
    }
}

/// Pretty JSON with every float written to 17 significant digits.
#[derive(Default)]
pub struct SignificantDigits {
    pretty: PrettyFormatter<'static>,
}

impl Formatter for SignificantDigits {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn begin_array<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.pretty.begin_array(writer)
    }

    fn end_array<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.pretty.end_array(writer)
    }

    fn begin_array_value<W: ?Sized + Write>(
        &mut self,
        writer: &mut W,
        first: bool,
    ) -> io::Result<()> {
        self.pretty.begin_array_value(writer, first)
    }

    fn end_array_value<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.pretty.end_array_value(writer)
    }

    fn begin_object<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.pretty.begin_object(writer)
    }

    fn end_object<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.pretty.end_object(writer)
    }

    fn begin_object_key<W: ?Sized + Write>(
        &mut self,
        writer: &mut W,
        first: bool,
    ) -> io::Result<()> {
        self.pretty.begin_object_key(writer, first)
    }

    fn begin_object_value<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.pretty.begin_object_value(writer)
    }

    fn end_object_value<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.pretty.end_object_value(writer)
    }
}

/// One row of the plot table.
#[derive(Clone, Debug, PartialEq)]
pub struct PointRow {
    pub component: usize,
    pub coords: Vec<f64>,
    pub values: Vec<f64>,
}

/// Write `rows` as CSV with the given value column names.
pub fn write_points<W: Write>(
    out: W,
    value_names: &[String],
    rows: &[PointRow],
) -> csv::Result<()> {
    let width = rows.iter().map(|r| r.coords.len()).max().unwrap_or(0);
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["component".to_string()];
    header.extend((0..width).map(|k| format!("x{k}")));
    header.extend(value_names.iter().cloned());
    w.write_record(&header)?;
    for row in rows {
        let mut record = vec![row.component.to_string()];
        record.extend((0..width).map(|k| {
            row.coords
                .get(k)
                .map_or(String::new(), |v| format!("{v:.16e}"))
        }));
        record.extend(row.values.iter().map(|v| format!("{v:.16e}")));
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}
