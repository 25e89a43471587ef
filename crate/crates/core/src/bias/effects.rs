//! Total and direct effects of interventions on a record attribute.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::records::{parse_records, ParsedRecord, RecordSet, RecordStatus};
use super::schema::AttributeSchema;
use crate::backend::DistributionProvider;
use crate::engine::{regenerate_counterfactual, GenerationSession, Intervention};
use crate::error::{Error, Result};
use crate::vocab::Tokenizer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectKind {
    /// Attributes between the intervened one and the outcome may change.
    Total,
    /// Attributes between the intervened one and the outcome keep their
    /// factual values.
    Direct,
}

/// One outcome of one intervention on one record. `counterfactual` is
/// `None` when the regenerated record could not be used (malformed, or a
/// zero value where zeros are excluded).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectRecord {
    pub record_id: String,
    pub attribute: String,
    pub old: String,
    pub new: String,
    pub outcome: String,
    pub factual: String,
    pub counterfactual: Option<String>,
    pub kind: EffectKind,
}

/// What the bias run needs to know about the model.
#[derive(Clone, Copy)]
pub struct EffectContext<'a> {
    pub provider: &'a dyn DistributionProvider,
    pub tokenizer: Tokenizer,
    pub schema: &'a AttributeSchema,
}

impl EffectContext<'_> {
    fn check_model(&self, session: &GenerationSession) -> Result<()> {
        let id = self.provider.model_id();
        if id != session.model_id {
            return Err(Error::domain(format!(
                "session was generated by model {} but the provider is {id}",
                session.model_id
            )));
        }
        Ok(())
    }

    /// Regenerates from `prefix_end` (exclusive output index) with the value
    /// of attribute `a` replaced, and returns the regenerated record.
    fn counterfactual_record(
        &self,
        session: &GenerationSession,
        record: &ParsedRecord,
        a: usize,
        new_value: &str,
        prefix_end: usize,
    ) -> Result<Option<(RecordStatus, Vec<String>)>> {
        self.check_model(session)?;
        let attr = &self.schema.attributes[a];
        if !attr.accepts(new_value) {
            return Err(Error::domain(format!(
                "{new_value:?} is not a value of {}",
                attr.name
            )));
        }
        let replacement = self.tokenizer.encode(new_value, self.provider.vocabulary())?;
        let span = record.spans[a];
        let out = session.output.as_slice();
        let mut prefix = session.prompt.as_slice().to_vec();
        prefix.extend_from_slice(&out[..span.start]);
        prefix.extend_from_slice(&replacement);
        prefix.extend_from_slice(&out[span.end..prefix_end]);
        let iv = Intervention::new(prefix_end as u32, prefix);
        let regen = regenerate_counterfactual(self.provider, session, &iv)?;
        let cf = regen.output_after(session.prompt.len());
        let candidates = parse_records(&cf, self.schema, self.provider, self.tokenizer);
        Ok(candidates
            .into_iter()
            .nth(record.index)
            .map(|c| (c.status, c.values)))
    }

    fn effects(
        &self,
        record: &ParsedRecord,
        a: usize,
        new_value: &str,
        outcomes: &[usize],
        kind: EffectKind,
        regenerated: Option<(RecordStatus, Vec<String>)>,
    ) -> Vec<EffectRecord> {
        let usable = match &regenerated {
            Some((RecordStatus::Malformed, _)) | None => None,
            Some((_, values)) => Some(values),
        };
        outcomes
            .iter()
            .map(|&o| {
                let outcome = &self.schema.attributes[o];
                let counterfactual = usable
                    .map(|v| v[o].clone())
                    .filter(|v| !(outcome.exclude_zero && outcome.is_zero(v)));
                EffectRecord {
                    record_id: record.id.clone(),
                    attribute: self.schema.attributes[a].name.clone(),
                    old: record.values[a].clone(),
                    new: new_value.to_owned(),
                    outcome: outcome.name.clone(),
                    factual: record.values[o].clone(),
                    counterfactual,
                    kind,
                }
            })
            .collect()
    }

    /// Sets `attribute` to `new_value`, keeps everything before it, and
    /// regenerates the rest counterfactually. One effect per later outcome.
    pub fn total_effect(
        &self,
        session: &GenerationSession,
        record: &ParsedRecord,
        attribute: &str,
        new_value: &str,
    ) -> Result<Vec<EffectRecord>> {
        let a = self.schema.index(attribute)?;
        let outcomes: Vec<usize> = (a + 1..self.schema.attributes.len())
            .filter(|&o| self.schema.attributes[o].outcome)
            .collect();
        if outcomes.is_empty() {
            return Err(Error::domain(format!("no outcome follows {attribute}")));
        }
        let regenerated = self.counterfactual_record(session, record, a, new_value, record.spans[a].end)?;
        if let Some((RecordStatus::Parsed | RecordStatus::ExcludedZero, values)) = &regenerated {
            debug_assert_eq!(&values[..a], &record.values[..a]);
        }
        Ok(self.effects(record, a, new_value, &outcomes, EffectKind::Total, regenerated))
    }

    /// Sets `attribute` to `new_value`, keeps every attribute before
    /// `outcome` at its factual value, and regenerates from the outcome's
    /// value on.
    pub fn direct_effect(
        &self,
        session: &GenerationSession,
        record: &ParsedRecord,
        attribute: &str,
        new_value: &str,
        outcome: &str,
    ) -> Result<EffectRecord> {
        let a = self.schema.index(attribute)?;
        let o = self.schema.index(outcome)?;
        if a >= o {
            return Err(Error::domain(format!("{attribute} does not precede {outcome}")));
        }
        // the prefix runs through the outcome's key token
        let regenerated = self.counterfactual_record(session, record, a, new_value, record.spans[o].key + 1)?;
        if let Some((RecordStatus::Parsed | RecordStatus::ExcludedZero, values)) = &regenerated {
            let intermediate_kept = (0..o).all(|i| i == a || values[i] == record.values[i]);
            if !intermediate_kept || values[a] != new_value {
                return Err(Error::domain(format!(
                    "direct regeneration of record {} altered attributes before {outcome}",
                    record.id
                )));
            }
        }
        let mut effects = self.effects(record, a, new_value, &[o], EffectKind::Direct, regenerated);
        Ok(effects.remove(0))
    }

    /// Every total effect of moving each sensitive attribute to each of its
    /// other values, plus the direct effects listed in the schema, for every
    /// record of `set`. Output order follows records, then schema order.
    pub fn run(&self, set: &RecordSet) -> Result<Vec<EffectRecord>> {
        let per_record = set
            .records
            .par_iter()
            .map(|record| -> Result<Vec<EffectRecord>> {
                let session = &set.sessions[record.session];
                let mut out = Vec::new();
                for (a, attr) in self.schema.attributes.iter().enumerate() {
                    if !attr.sensitive {
                        continue;
                    }
                    for value in attr.values.iter().filter(|v| **v != record.values[a]) {
                        out.extend(self.total_effect(session, record, &attr.name, value)?);
                        for pair in self.schema.direct.iter().filter(|p| p.attribute == attr.name) {
                            out.push(self.direct_effect(session, record, &attr.name, value, &pair.outcome)?);
                        }
                    }
                }
                Ok(out)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(per_record.into_iter().flatten().collect())
    }
}

/// Writes effects as CSV with header
/// `record_id,attribute,old,new,outcome,factual,counterfactual,kind`;
/// unusable counterfactuals are empty.
pub fn write_effects_csv(effects: &[EffectRecord], w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "record_id",
        "attribute",
        "old",
        "new",
        "outcome",
        "factual",
        "counterfactual",
        "kind",
    ])?;
    for e in effects {
        out.write_record([
            e.record_id.as_str(),
            &e.attribute,
            &e.old,
            &e.new,
            &e.outcome,
            &e.factual,
            e.counterfactual.as_deref().unwrap_or(""),
            match e.kind {
                EffectKind::Total => "total",
                EffectKind::Direct => "direct",
            },
        ])?;
    }
    out.flush()?;
    Ok(())
}
