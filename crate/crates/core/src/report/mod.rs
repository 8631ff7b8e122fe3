//! The structured stain report: canonical serialization, lenient validation
//! of model output and field-value resolution for explanation targeting.

mod scan;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

pub use scan::{extract_json_block, json_block_range, object_value_range};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ReportError {
    #[error("no JSON object found in text")]
    NoJsonFound,
    #[error("malformed report JSON: {0}")]
    ParseError(String),
    #[error("missing field `{0}`")]
    MissingField(String),
    #[error("invalid staining intensity grade: {0}")]
    InvalidGrade(String),
    #[error("invalid percentage range: {0}")]
    InvalidRange(String),
    #[error("invalid staining location: {0}")]
    InvalidLocation(String),
    #[error("unknown report field `{0}`")]
    UnknownField(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StainType {
    #[serde(rename = "KI67")]
    Ki67,
    #[serde(rename = "PDL1")]
    Pdl1,
    #[serde(rename = "BRAF")]
    Braf,
    #[serde(rename = "OTHER")]
    Other,
}

impl StainType {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Ki67 => "KI67",
            Self::Pdl1 => "PDL1",
            Self::Braf => "BRAF",
            Self::Other => "OTHER",
        }
    }

    /// Matches loosely written labels such as `Ki-67` or `pd-l1`.
    pub fn recognize(label: &str) -> Option<Self> {
        let squashed: String = label
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .map(|c| c.to_ascii_uppercase())
            .collect();
        match squashed.as_str() {
            "KI67" => Some(Self::Ki67),
            "PDL1" => Some(Self::Pdl1),
            "BRAF" => Some(Self::Braf),
            "OTHER" => Some(Self::Other),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StainLocation {
    Nuclear,
    Cytoplasmic,
    Membranous,
    Mixed,
}

impl StainLocation {
    pub const ALL: [StainLocation; 4] = [
        Self::Nuclear,
        Self::Cytoplasmic,
        Self::Membranous,
        Self::Mixed,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Nuclear => "nuclear",
            Self::Cytoplasmic => "cytoplasmic",
            Self::Membranous => "membranous",
            Self::Mixed => "mixed",
        }
    }
}

impl FromStr for StainLocation {
    type Err = ReportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        Self::ALL
            .into_iter()
            .find(|l| l.as_str() == lower)
            .ok_or_else(|| ReportError::InvalidLocation(s.to_string()))
    }
}

/// Inclusive percentage range, serialized as `"low-high"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct PercentRange {
    low: u8,
    high: u8,
}

impl PercentRange {
    pub fn new(low: u8, high: u8) -> Result<Self, ReportError> {
        if low > high || high > 100 {
            return Err(ReportError::InvalidRange(format!("{low}-{high}")));
        }
        Ok(Self { low, high })
    }

    pub fn low(self) -> u8 {
        self.low
    }

    pub fn high(self) -> u8 {
        self.high
    }
}

impl fmt::Display for PercentRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.low, self.high)
    }
}

impl FromStr for PercentRange {
    type Err = ReportError;

    /// Accepts `"0-10"`, `"0 - 10%"` or a single value such as `"5"`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let invalid = || ReportError::InvalidRange(s.to_string());
        let bound = |part: &str| -> Result<u8, ReportError> {
            let part = part.trim().trim_end_matches('%').trim();
            let v: u32 = part.parse().map_err(|_| invalid())?;
            u8::try_from(v).map_err(|_| invalid())
        };
        let (low, high) = match s.trim().split_once('-') {
            Some((lo, hi)) => (bound(lo)?, bound(hi)?),
            None => {
                let v = bound(s)?;
                (v, v)
            }
        };
        Self::new(low, high).map_err(|_| invalid())
    }
}

impl From<PercentRange> for String {
    fn from(r: PercentRange) -> String {
        r.to_string()
    }
}

impl TryFrom<String> for PercentRange {
    type Error = ReportError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

/// Structured analysis of one slide. Field order is the canonical key order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StainReport {
    pub stain_type: StainType,
    pub percentage_of_cells_stained: PercentRange,
    /// `None` when the model did not grade intensity; serialized as `null`.
    pub staining_intensity_grade: Option<u8>,
    pub type_of_cells_stained: String,
    pub staining_location_per_cell: StainLocation,
    pub report: String,
    pub explanation: String,
}

impl StainReport {
    /// Canonical text form: UTF-8 JSON, fixed key order, two-space indent.
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization is infallible")
    }
}

/// One of the seven report keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportField {
    StainType,
    PercentageOfCellsStained,
    StainingIntensityGrade,
    TypeOfCellsStained,
    StainingLocationPerCell,
    Report,
    Explanation,
}

impl ReportField {
    pub const ALL: [ReportField; 7] = [
        Self::StainType,
        Self::PercentageOfCellsStained,
        Self::StainingIntensityGrade,
        Self::TypeOfCellsStained,
        Self::StainingLocationPerCell,
        Self::Report,
        Self::Explanation,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Self::StainType => "stain_type",
            Self::PercentageOfCellsStained => "percentage_of_cells_stained",
            Self::StainingIntensityGrade => "staining_intensity_grade",
            Self::TypeOfCellsStained => "type_of_cells_stained",
            Self::StainingLocationPerCell => "staining_location_per_cell",
            Self::Report => "report",
            Self::Explanation => "explanation",
        }
    }
}

impl fmt::Display for ReportField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for ReportField {
    type Err = ReportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|f| f.key() == s)
            .ok_or_else(|| ReportError::UnknownField(s.to_string()))
    }
}

/// A validated report plus any non-fatal observations made while parsing.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedReport {
    pub report: StainReport,
    pub warnings: Vec<String>,
}

/// Parses and canonicalizes a report object. Extra keys and unrecognised
/// stain labels produce warnings rather than errors.
pub fn validate_report(json_text: &str) -> Result<ValidatedReport, ReportError> {
    let value: Value =
        serde_json::from_str(json_text).map_err(|e| ReportError::ParseError(e.to_string()))?;
    let Value::Object(obj) = value else {
        return Err(ReportError::ParseError("top-level value is not an object".into()));
    };
    let mut warnings = Vec::new();

    let stain_label = text_field(&obj, ReportField::StainType)?;
    let stain_type = StainType::recognize(&stain_label).unwrap_or_else(|| {
        warnings.push(format!("unrecognised stain_type `{stain_label}` mapped to OTHER"));
        StainType::Other
    });

    let percentage_of_cells_stained = match required(&obj, ReportField::PercentageOfCellsStained)? {
        Value::String(s) => s.parse()?,
        Value::Number(n) => {
            let v = n
                .as_u64()
                .and_then(|v| u8::try_from(v).ok())
                .ok_or_else(|| ReportError::InvalidRange(n.to_string()))?;
            PercentRange::new(v, v)?
        }
        other => return Err(ReportError::InvalidRange(other.to_string())),
    };

    let staining_intensity_grade = match required(&obj, ReportField::StainingIntensityGrade) {
        Ok(v) => parse_grade(v)?,
        Err(_) => {
            warnings.push("staining_intensity_grade absent".into());
            None
        }
    };

    let type_of_cells_stained = text_field(&obj, ReportField::TypeOfCellsStained)?;
    let location_text = match required(&obj, ReportField::StainingLocationPerCell)? {
        Value::String(s) => s.clone(),
        other => return Err(ReportError::InvalidLocation(other.to_string())),
    };
    let staining_location_per_cell = location_text.parse()?;
    let report = text_field(&obj, ReportField::Report)?;
    let explanation = text_field(&obj, ReportField::Explanation)?;

    for key in obj.keys() {
        if key.parse::<ReportField>().is_err() {
            warnings.push(format!("ignored extra key `{key}`"));
        }
    }

    Ok(ValidatedReport {
        report: StainReport {
            stain_type,
            percentage_of_cells_stained,
            staining_intensity_grade,
            type_of_cells_stained,
            staining_location_per_cell,
            report,
            explanation,
        },
        warnings,
    })
}

fn required(obj: &Map<String, Value>, field: ReportField) -> Result<&Value, ReportError> {
    obj.get(field.key())
        .ok_or_else(|| ReportError::MissingField(field.key().to_string()))
}

fn text_field(obj: &Map<String, Value>, field: ReportField) -> Result<String, ReportError> {
    match required(obj, field)? {
        Value::String(s) => Ok(s.clone()),
        other => Err(ReportError::ParseError(format!(
            "`{}` must be a string, got {other}",
            field.key()
        ))),
    }
}

fn parse_grade(v: &Value) -> Result<Option<u8>, ReportError> {
    let grade = match v {
        Value::Null => return Ok(None),
        Value::Number(n) => n
            .as_u64()
            .or_else(|| n.as_f64().filter(|f| f.fract() == 0.0 && *f >= 0.0).map(|f| f as u64)),
        Value::String(s) => s.trim().parse::<u64>().ok(),
        _ => None,
    };
    match grade {
        Some(g @ 0..=3) => Ok(Some(g as u8)),
        _ => Err(ReportError::InvalidGrade(v.to_string())),
    }
}

/// The value text of `field` exactly as it appears in the canonical
/// serialization, without surrounding quotes for strings.
pub fn resolve_field_value(report: &StainReport, field: ReportField) -> String {
    fn bare(s: &str) -> String {
        let quoted = serde_json::to_string(s).expect("string serialization is infallible");
        quoted[1..quoted.len() - 1].to_string()
    }
    match field {
        ReportField::StainType => report.stain_type.as_str().to_string(),
        ReportField::PercentageOfCellsStained => report.percentage_of_cells_stained.to_string(),
        ReportField::StainingIntensityGrade => match report.staining_intensity_grade {
            Some(g) => g.to_string(),
            None => "null".to_string(),
        },
        ReportField::TypeOfCellsStained => bare(&report.type_of_cells_stained),
        ReportField::StainingLocationPerCell => report.staining_location_per_cell.as_str().to_string(),
        ReportField::Report => bare(&report.report),
        ReportField::Explanation => bare(&report.explanation),
    }
}

/// Same as [`resolve_field_value`] but from a field name.
pub fn resolve_field_by_name(report: &StainReport, name: &str) -> Result<String, ReportError> {
    Ok(resolve_field_value(report, name.parse()?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const TABLE_ONE: &str = r#"{
  "stain_type": "PDL1",
  "percentage_of_cells_stained": "0-10",
  "type_of_cells_stained": "tumor cells",
  "staining_location_per_cell": "cytoplasmic",
  "report": "PDL1 immunohistochemistry shows a low percentage of tumor cells exhibiting cytoplasmic staining.",
  "explanation": "The image shows a tissue sample with a predominantly cellular appearance... the low PDL1 expression suggests a less aggressive tumor."
}"#;

    fn sample(grade: Option<u8>) -> StainReport {
        StainReport {
            stain_type: StainType::Ki67,
            percentage_of_cells_stained: PercentRange::new(20, 30).unwrap(),
            staining_intensity_grade: grade,
            type_of_cells_stained: "tumor \"nuclei\"".into(),
            staining_location_per_cell: StainLocation::Nuclear,
            report: "Moderate proliferation.".into(),
            explanation: "Brown nuclei in hot spots.".into(),
        }
    }

    #[test]
    fn table_one_output_validates() {
        let v = validate_report(TABLE_ONE).unwrap();
        assert_eq!(v.report.stain_type, StainType::Pdl1);
        assert_eq!(v.report.percentage_of_cells_stained, PercentRange::new(0, 10).unwrap());
        assert_eq!(v.report.type_of_cells_stained, "tumor cells");
        assert_eq!(v.report.staining_location_per_cell, StainLocation::Cytoplasmic);
        assert_eq!(v.report.staining_intensity_grade, None);
        assert_eq!(
            resolve_field_value(&v.report, ReportField::StainingLocationPerCell),
            "cytoplasmic"
        );
    }

    #[test]
    fn grade_out_of_range_rejected() {
        let mut value: Value = serde_json::from_str(TABLE_ONE).unwrap();
        value["staining_intensity_grade"] = 5.into();
        assert!(matches!(
            validate_report(&value.to_string()),
            Err(ReportError::InvalidGrade(_))
        ));
    }

    #[test]
    fn inverted_range_rejected() {
        let text = TABLE_ONE.replace("\"0-10\"", "\"10-5\"");
        assert!(matches!(validate_report(&text), Err(ReportError::InvalidRange(_))));
        assert!("50-101".parse::<PercentRange>().is_err());
        assert!("abc".parse::<PercentRange>().is_err());
    }

    #[test]
    fn lenient_inputs_canonicalize() {
        let mut value: Value = serde_json::from_str(TABLE_ONE).unwrap();
        value["stain_type"] = "Ki-67".into();
        value["staining_location_per_cell"] = "Cytoplasmic".into();
        value["percentage_of_cells_stained"] = "20 - 30%".into();
        value["staining_intensity_grade"] = "2".into();
        value["extra"] = true.into();
        let v = validate_report(&value.to_string()).unwrap();
        assert_eq!(v.report.stain_type, StainType::Ki67);
        assert_eq!(v.report.staining_location_per_cell, StainLocation::Cytoplasmic);
        assert_eq!(v.report.percentage_of_cells_stained.to_string(), "20-30");
        assert_eq!(v.report.staining_intensity_grade, Some(2));
        assert!(v.warnings.iter().any(|w| w.contains("extra")));
    }

    #[test]
    fn unknown_stain_maps_to_other_with_warning() {
        let text = TABLE_ONE.replace("\"PDL1\"", "\"HER2\"");
        let v = validate_report(&text).unwrap();
        assert_eq!(v.report.stain_type, StainType::Other);
        assert_eq!(v.warnings.len(), 2);
    }

    #[test]
    fn missing_and_bad_fields() {
        assert_eq!(
            validate_report(r#"{"stain_type":"PDL1"}"#),
            Err(ReportError::MissingField("percentage_of_cells_stained".into()))
        );
        let text = TABLE_ONE.replace("\"cytoplasmic\",", "\"perinuclear\",");
        assert!(matches!(validate_report(&text), Err(ReportError::InvalidLocation(_))));
        assert!(matches!(validate_report("[1,2]"), Err(ReportError::ParseError(_))));
        assert!(matches!(validate_report("{"), Err(ReportError::ParseError(_))));
    }

    #[test]
    fn canonical_layout() {
        let text = sample(Some(3)).to_canonical_json();
        assert!(text.starts_with("{\n  \"stain_type\": \"KI67\",\n  \"percentage_of_cells_stained\": \"20-30\",\n  \"staining_intensity_grade\": 3,"));
        let keys: Vec<usize> = ReportField::ALL
            .iter()
            .map(|f| text.find(&format!("\"{}\"", f.key())).unwrap())
            .collect();
        assert!(keys.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn resolve_values() {
        let r = sample(Some(3));
        assert_eq!(resolve_field_value(&r, ReportField::StainingIntensityGrade), "3");
        assert_eq!(resolve_field_value(&r, ReportField::TypeOfCellsStained), "tumor \\\"nuclei\\\"");
        assert_eq!(resolve_field_value(&sample(None), ReportField::StainingIntensityGrade), "null");
        assert_eq!(
            resolve_field_by_name(&r, "banana"),
            Err(ReportError::UnknownField("banana".into()))
        );
        let text = r.to_canonical_json();
        for field in ReportField::ALL {
            let range = object_value_range(&text, field.key()).unwrap();
            assert_eq!(&text[range], resolve_field_value(&r, field));
        }
    }

    fn arb_report() -> impl Strategy<Value = StainReport> {
        (
            0usize..4,
            (0u8..=100, 0u8..=100),
            proptest::option::of(0u8..=3),
            ".{0,20}",
            0usize..4,
            ".{0,40}",
            ".{0,40}",
        )
            .prop_map(|(s, (a, b), grade, cells, loc, report, explanation)| StainReport {
                stain_type: [StainType::Ki67, StainType::Pdl1, StainType::Braf, StainType::Other][s],
                percentage_of_cells_stained: PercentRange::new(a.min(b), a.max(b)).unwrap(),
                staining_intensity_grade: grade,
                type_of_cells_stained: cells,
                staining_location_per_cell: StainLocation::ALL[loc],
                report,
                explanation,
            })
    }

    proptest! {
        #[test]
        fn serialize_validate_round_trip(r in arb_report()) {
            let v = validate_report(&r.to_canonical_json()).unwrap();
            prop_assert_eq!(&v.report, &r);
            // an absent grade is serialized as null, so nothing is missing
            prop_assert!(v.warnings.is_empty());
        }

        #[test]
        fn canonical_value_ranges_match_resolution(r in arb_report()) {
            let text = r.to_canonical_json();
            for field in ReportField::ALL {
                let range = object_value_range(&text, field.key()).unwrap();
                let expected = resolve_field_value(&r, field);
                prop_assert_eq!(&text[range], expected.as_str());
            }
        }
    }
}
