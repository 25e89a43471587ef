//! Declarative description of the structured records a model is asked to
//! generate.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributeKind {
    Categorical,
    Numeric,
}

/// How an outcome's values are turned into numbers for summaries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    /// The education-level table of [`super::education_to_numeric`].
    Education,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Attribute {
    pub name: String,
    pub kind: AttributeKind,
    /// Allowed values of a categorical attribute. Empty means any value.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub values: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
    /// Effects on this attribute are measured.
    #[serde(default)]
    pub outcome: bool,
    /// Interventions target this attribute.
    #[serde(default)]
    pub sensitive: bool,
    /// Records whose value is exactly zero are discarded.
    #[serde(default)]
    pub exclude_zero: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<Scale>,
}

impl Attribute {
    /// The key token that opens this attribute's line.
    pub fn key(&self) -> String {
        format!("{}:", self.name)
    }

    /// Checks a parsed value against the declared kind, range and values.
    pub fn accepts(&self, value: &str) -> bool {
        if value.is_empty() {
            return false;
        }
        match self.kind {
            AttributeKind::Categorical => self.values.is_empty() || self.values.iter().any(|v| v == value),
            AttributeKind::Numeric => match value.parse::<f64>() {
                Ok(x) if x.is_finite() => {
                    self.min.is_none_or(|m| x >= m) && self.max.is_none_or(|m| x <= m)
                }
                _ => false,
            },
        }
    }

    pub fn is_zero(&self, value: &str) -> bool {
        self.kind == AttributeKind::Numeric && value.parse::<f64>() == Ok(0.0)
    }
}

/// A (sensitive attribute, outcome) pair whose direct effect is measured.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DirectPair {
    pub attribute: String,
    pub outcome: String,
}

/// Ordered attributes of a record, rendered one `name: value` line each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributeSchema {
    /// Text placed before the generated records.
    pub prompt: String,
    pub attributes: Vec<Attribute>,
    #[serde(default)]
    pub direct: Vec<DirectPair>,
}

impl AttributeSchema {
    pub fn from_toml(text: &str) -> Result<Self> {
        let schema: Self = toml::from_str(text).map_err(|e| Error::format(format!("schema: {e}")))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.attributes.is_empty() {
            return Err(Error::format("schema has no attributes"));
        }
        for (i, a) in self.attributes.iter().enumerate() {
            if a.name.is_empty() || a.name.contains([' ', '\t', '\n', ':']) {
                return Err(Error::format(format!("invalid attribute name {:?}", a.name)));
            }
            if self.attributes[..i].iter().any(|b| b.name == a.name) {
                return Err(Error::format(format!("attribute {} declared twice", a.name)));
            }
            match a.kind {
                AttributeKind::Categorical => {
                    if a.min.is_some() || a.max.is_some() {
                        return Err(Error::format(format!("categorical attribute {} has a range", a.name)));
                    }
                    if a.exclude_zero {
                        return Err(Error::format(format!("categorical attribute {} cannot exclude zero", a.name)));
                    }
                    if a.values.iter().any(|v| v.trim() != v || v.is_empty() || v.contains('\n')) {
                        return Err(Error::format(format!("attribute {} has an invalid value", a.name)));
                    }
                }
                AttributeKind::Numeric => {
                    if !a.values.is_empty() {
                        return Err(Error::format(format!("numeric attribute {} lists values", a.name)));
                    }
                    if a.sensitive {
                        return Err(Error::format(format!(
                            "numeric attribute {} cannot be intervened on",
                            a.name
                        )));
                    }
                    if a.scale.is_some() {
                        return Err(Error::format(format!("numeric attribute {} has a scale", a.name)));
                    }
                }
            }
            if a.sensitive && a.values.len() < 2 {
                return Err(Error::format(format!(
                    "sensitive attribute {} needs at least two values",
                    a.name
                )));
            }
            if a.sensitive && !self.attributes[i + 1..].iter().any(|b| b.outcome) {
                return Err(Error::format(format!(
                    "sensitive attribute {} has no outcome after it",
                    a.name
                )));
            }
        }
        for pair in &self.direct {
            let a = self.index(&pair.attribute)?;
            let o = self.index(&pair.outcome)?;
            if !self.attributes[a].sensitive || !self.attributes[o].outcome || a >= o {
                return Err(Error::format(format!(
                    "direct pair {} -> {} must go from a sensitive attribute to a later outcome",
                    pair.attribute, pair.outcome
                )));
            }
        }
        Ok(())
    }

    pub fn index(&self, name: &str) -> Result<usize> {
        self.attributes
            .iter()
            .position(|a| a.name == name)
            .ok_or_else(|| Error::domain(format!("unknown attribute {name}")))
    }

    pub fn attribute(&self, name: &str) -> Result<&Attribute> {
        Ok(&self.attributes[self.index(name)?])
    }

    /// One record as text, a `name: value` line per attribute.
    pub fn render(&self, values: &[&str]) -> String {
        self.attributes
            .iter()
            .zip(values)
            .map(|(a, v)| format!("{}: {v}\n", a.name))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SCHEMA: &str = r#"
prompt = "people:\n"

[[attributes]]
name = "sex"
kind = "categorical"
values = ["male", "female"]
sensitive = true

[[attributes]]
name = "income"
kind = "numeric"
min = 0
outcome = true
exclude_zero = true

[[direct]]
attribute = "sex"
outcome = "income"
"#;

    #[test]
    fn parses_and_checks_values() {
        let s = AttributeSchema::from_toml(SCHEMA).unwrap();
        assert_eq!(s.prompt, "people:\n");
        let income = s.attribute("income").unwrap();
        assert!(income.accepts("52000"));
        assert!(!income.accepts("-3"));
        assert!(!income.accepts("lots"));
        assert!(income.is_zero("0"));
        let sex = s.attribute("sex").unwrap();
        assert!(sex.accepts("female"));
        assert!(!sex.accepts("other"));
        assert_eq!(s.render(&["male", "10"]), "sex: male\nincome: 10\n");
    }

    #[test]
    fn rejects_bad_schemas() {
        let swapped = SCHEMA.replace("attribute = \"sex\"\noutcome = \"income\"", "attribute = \"income\"\noutcome = \"sex\"");
        assert!(AttributeSchema::from_toml(&swapped).is_err());
        let no_outcome = SCHEMA.replace("outcome = true", "");
        assert!(AttributeSchema::from_toml(&no_outcome).is_err());
        assert!(AttributeSchema::from_toml("prompt = \"\"\nattributes = []").is_err());
        let typo = SCHEMA.replace("sensitive = true", "sensitve = true");
        assert!(AttributeSchema::from_toml(&typo).is_err());
    }
}
