use crate::mutation::{MutationError, MutationInstruction, MutationPlan};
use crate::packet::Proto;

use super::{EntityKind, EntityRef, GeneratorConfig, PlanTarget};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FlatField {
    pub name: String,
    /// Whole bytes, 1 to 4.
    pub width: usize,
    pub default: u32,
}

/// A synthetic header made of independent byte-aligned fields, with no
/// lengths or checksums. Small enough to enumerate exhaustively.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FlatTemplate {
    pub fields: Vec<FlatField>,
}

impl FlatTemplate {
    /// One-byte fields with default zero.
    pub fn bytes(names: &[&str]) -> Self {
        FlatTemplate {
            fields: names.iter().map(|n| FlatField { name: n.to_string(), width: 1, default: 0 }).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.fields.iter().map(|f| f.width).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }
}

impl PlanTarget for FlatTemplate {
    fn entities(&self, _config: &GeneratorConfig) -> Vec<EntityRef> {
        self.fields
            .iter()
            .enumerate()
            .map(|(i, f)| EntityRef {
                kind: EntityKind::Field,
                layer: Proto::Flat,
                name: f.name.clone(),
                ordinal: i,
                bits: f.width as u32 * 8,
                excluded: Some(f.default as u64),
            })
            .collect()
    }

    fn render(&self, plan: &MutationPlan) -> Result<Vec<u8>, MutationError> {
        plan.validate()?;
        let mut values: Vec<u32> = self.fields.iter().map(|f| f.default).collect();
        let mut truncate = 0;
        for ins in &plan.instructions {
            match ins {
                MutationInstruction::Replace { layer: Proto::Flat, field, value } => {
                    let i = self
                        .fields
                        .iter()
                        .position(|f| &f.name == field)
                        .ok_or_else(|| MutationError::PlanInvalid(format!("no flat field {field}")))?;
                    values[i] = *value;
                }
                MutationInstruction::Truncate { count } => truncate = *count,
                other => return Err(MutationError::PlanInvalid(format!("unsupported on flat header: {other}"))),
            }
        }
        let mut out = Vec::with_capacity(self.len());
        for (f, v) in self.fields.iter().zip(values) {
            out.extend_from_slice(&v.to_be_bytes()[4 - f.width..]);
        }
        if truncate >= out.len() && truncate > 0 {
            return Err(MutationError::TruncateTooLarge { count: truncate, len: out.len() });
        }
        out.truncate(out.len() - truncate);
        Ok(out)
    }

    fn truncation_limit(&self) -> usize {
        self.len().saturating_sub(1)
    }
}
