//! Aggregation of effect records into per-intervention tables.

use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;

use super::education::education_to_numeric;
use super::effects::{EffectKind, EffectRecord};
use super::schema::{AttributeKind, AttributeSchema, Scale};
use crate::error::{Error, Result};

/// Shift statistics for one (attribute, old, new, outcome, kind) group.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectGroup {
    pub attribute: String,
    pub old: String,
    pub new: String,
    pub outcome: String,
    pub kind: EffectKind,
    /// Effects with a usable counterfactual.
    pub n: usize,
    /// Effects whose counterfactual record was unusable.
    pub excluded: usize,
    /// Numeric outcomes, or outcomes with a scale: counterfactual minus
    /// factual. `None` for plain categorical outcomes or when `n` is 0.
    pub median_shift: Option<f64>,
    pub mean_shift: Option<f64>,
    /// Standard error of `mean_shift`.
    pub std_error: Option<f64>,
    /// Values whose scale maps to nothing are left out of the shifts.
    pub unmapped: usize,
    pub factual_histogram: BTreeMap<String, usize>,
    pub counterfactual_histogram: BTreeMap<String, usize>,
    /// Categorical outcomes: counts of (factual, counterfactual) value pairs.
    pub flows: BTreeMap<String, BTreeMap<String, usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectSummary {
    pub groups: Vec<EffectGroup>,
}

impl EffectSummary {
    pub fn group(&self, attribute: &str, old: &str, new: &str, outcome: &str, kind: EffectKind) -> Option<&EffectGroup> {
        self.groups.iter().find(|g| {
            g.attribute == attribute && g.old == old && g.new == new && g.outcome == outcome && g.kind == kind
        })
    }
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[mid]
    } else {
        (v[mid - 1] + v[mid]) / 2.0
    })
}

/// Mean and its standard error (sample standard deviation over sqrt n; 0
/// for a single value).
pub fn mean_and_se(values: &[f64]) -> Option<(f64, f64)> {
    let n = values.len();
    if n == 0 {
        return None;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return Some((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    Some((mean, (var / n as f64).sqrt()))
}

fn numeric(schema: &AttributeSchema, outcome: &str, value: &str) -> Result<Option<Option<f64>>> {
    let attr = schema.attribute(outcome)?;
    Ok(match (attr.kind, attr.scale) {
        (AttributeKind::Numeric, _) => Some(value.parse::<f64>().ok()),
        (_, Some(Scale::Education)) => Some(education_to_numeric(value).map(f64::from)),
        _ => None,
    })
}

/// Groups effects by intervention and outcome, in first-seen order.
pub fn summarize_effects(effects: &[EffectRecord], schema: &AttributeSchema) -> Result<EffectSummary> {
    if effects.is_empty() {
        return Err(Error::domain("no effects to summarize"));
    }
    let mut order: Vec<(String, String, String, String, EffectKind)> = Vec::new();
    let mut buckets: BTreeMap<(String, String, String, String, EffectKind), Vec<&EffectRecord>> = BTreeMap::new();
    for e in effects {
        let key = (e.attribute.clone(), e.old.clone(), e.new.clone(), e.outcome.clone(), e.kind);
        let bucket = buckets.entry(key.clone()).or_default();
        if bucket.is_empty() {
            order.push(key);
        }
        bucket.push(e);
    }
    let mut groups = Vec::with_capacity(order.len());
    for key in order {
        let members = &buckets[&key];
        let (attribute, old, new, outcome, kind) = key.clone();
        let mut g = EffectGroup {
            attribute,
            old,
            new,
            outcome,
            kind,
            n: 0,
            excluded: 0,
            median_shift: None,
            mean_shift: None,
            std_error: None,
            unmapped: 0,
            factual_histogram: BTreeMap::new(),
            counterfactual_histogram: BTreeMap::new(),
            flows: BTreeMap::new(),
        };
        let mut shifts = Vec::new();
        let mut scaled = false;
        for e in members {
            let Some(cf) = &e.counterfactual else {
                g.excluded += 1;
                continue;
            };
            g.n += 1;
            *g.factual_histogram.entry(e.factual.clone()).or_default() += 1;
            *g.counterfactual_histogram.entry(cf.clone()).or_default() += 1;
            match (numeric(schema, &e.outcome, &e.factual)?, numeric(schema, &e.outcome, cf)?) {
                (Some(f), Some(c)) => {
                    scaled = true;
                    match (f, c) {
                        (Some(f), Some(c)) => shifts.push(c - f),
                        _ => g.unmapped += 1,
                    }
                }
                _ => {
                    *g.flows.entry(e.factual.clone()).or_default().entry(cf.clone()).or_default() += 1;
                }
            }
        }
        if scaled {
            g.median_shift = median(&shifts);
            if let Some((m, se)) = mean_and_se(&shifts) {
                g.mean_shift = Some(m);
                g.std_error = Some(se);
            }
        }
        groups.push(g);
    }
    Ok(EffectSummary { groups })
}

/// One line per group:
/// `attribute,old,new,outcome,kind,n,excluded,unmapped,median_shift,mean_shift,std_error`.
pub fn write_summary_csv(summary: &EffectSummary, w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "attribute",
        "old",
        "new",
        "outcome",
        "kind",
        "n",
        "excluded",
        "unmapped",
        "median_shift",
        "mean_shift",
        "std_error",
    ])?;
    let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    for g in &summary.groups {
        out.write_record([
            g.attribute.clone(),
            g.old.clone(),
            g.new.clone(),
            g.outcome.clone(),
            match g.kind {
                EffectKind::Total => "total".into(),
                EffectKind::Direct => "direct".into(),
            },
            g.n.to_string(),
            g.excluded.to_string(),
            g.unmapped.to_string(),
            opt(g.median_shift),
            opt(g.mean_shift),
            opt(g.std_error),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> AttributeSchema {
        AttributeSchema::from_toml(
            r#"
prompt = ""
[[attributes]]
name = "sex"
kind = "categorical"
values = ["male", "female"]
sensitive = true
[[attributes]]
name = "job"
kind = "categorical"
outcome = true
[[attributes]]
name = "income"
kind = "numeric"
outcome = true
[[attributes]]
name = "education"
kind = "categorical"
outcome = true
scale = "education"
"#,
        )
        .unwrap()
    }

    fn effect(outcome: &str, f: &str, c: Option<&str>) -> EffectRecord {
        EffectRecord {
            record_id: "r".into(),
            attribute: "sex".into(),
            old: "male".into(),
            new: "female".into(),
            outcome: outcome.into(),
            factual: f.into(),
            counterfactual: c.map(str::to_owned),
            kind: EffectKind::Total,
        }
    }

    #[test]
    fn singleton_income_shift() {
        let s = summarize_effects(&[effect("income", "50000", Some("60000"))], &schema()).unwrap();
        let g = &s.groups[0];
        assert_eq!(g.median_shift, Some(10000.0));
        assert_eq!(g.mean_shift, Some(10000.0));
        assert_eq!(g.std_error, Some(0.0));
    }

    #[test]
    fn null_effects_have_zero_shift() {
        let e = vec![
            effect("income", "10", Some("10")),
            effect("income", "20", Some("20")),
            effect("education", "PhD", Some("PhD")),
            effect("job", "nurse", Some("nurse")),
        ];
        let s = summarize_effects(&e, &schema()).unwrap();
        assert_eq!(s.groups[0].median_shift, Some(0.0));
        assert_eq!(s.groups[1].mean_shift, Some(0.0));
        assert_eq!(s.groups[2].median_shift, None);
        assert_eq!(s.groups[2].flows["nurse"]["nurse"], 1);
    }

    #[test]
    fn exclusions_and_unmapped() {
        let e = vec![
            effect("education", "PhD", Some("High school")),
            effect("education", "PhD", Some("Kindergarten")),
            effect("education", "PhD", None),
        ];
        let s = summarize_effects(&e, &schema()).unwrap();
        let g = &s.groups[0];
        assert_eq!((g.n, g.excluded, g.unmapped), (2, 1, 1));
        assert_eq!(g.mean_shift, Some(-4.0));
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
        assert!(summarize_effects(&[], &schema()).is_err());
    }
}
