//! Token-budgeted prompt assembly.

use serde::{Deserialize, Serialize};

use super::GenerateError;
use crate::llm::tokens::TokenCounter;

pub const DEFAULT_BUDGET: usize = 8000;

/// Section kinds, from never-dropped to dropped-first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SectionTag {
    FocalSource,
    ImportPath,
    ArgumentPlans,
    BehaviorDigest,
    SemanticsDigest,
    TestExamples,
}

impl SectionTag {
    /// 0 is never dropped; higher numbers go first.
    pub fn priority(self) -> u8 {
        match self {
            SectionTag::FocalSource | SectionTag::ImportPath => 0,
            SectionTag::ArgumentPlans => 1,
            SectionTag::BehaviorDigest => 2,
            SectionTag::SemanticsDigest => 3,
            SectionTag::TestExamples => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Section {
    pub tag: SectionTag,
    pub text: String,
    pub priority: u8,
}

impl Section {
    pub fn new(tag: SectionTag, text: impl Into<String>) -> Self {
        Self { tag, text: text.into(), priority: tag.priority() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub system: String,
    pub sections: Vec<Section>,
    pub token_estimate: usize,
    pub budget: usize,
    /// Sections removed to meet the budget, in drop order.
    pub dropped: Vec<SectionTag>,
}

impl Prompt {
    /// User message: the retained sections separated by blank lines.
    pub fn user_text(&self) -> String {
        self.sections.iter().map(|s| s.text.trim_end()).collect::<Vec<_>>().join("\n\n")
    }

    pub fn has(&self, tag: SectionTag) -> bool {
        self.sections.iter().any(|s| s.tag == tag)
    }
}

fn estimate(counter: &dyn TokenCounter, system: &str, sections: &[Section]) -> usize {
    let user = sections.iter().map(|s| s.text.trim_end()).collect::<Vec<_>>().join("\n\n");
    counter.count(system) + counter.count(&user)
}

/// Orders sections by priority and drops whole sections, lowest priority
/// (and, within a priority, latest) first, until the estimate fits.
pub fn assemble(system: &str, sections: Vec<Section>, budget: usize, counter: &dyn TokenCounter) -> Result<Prompt, GenerateError> {
    let mut sections: Vec<Section> = sections.into_iter().filter(|s| !s.text.trim().is_empty()).collect();
    sections.sort_by_key(|s| s.priority);
    let essential: Vec<Section> = sections.iter().filter(|s| s.priority == 0).cloned().collect();
    let floor = estimate(counter, system, &essential);
    if floor > budget {
        return Err(GenerateError::BudgetTooSmall { needed: floor, budget });
    }
    let mut dropped = Vec::new();
    let mut current = estimate(counter, system, &sections);
    while current > budget {
        let victim = sections
            .iter()
            .enumerate()
            .filter(|(_, s)| s.priority > 0)
            .max_by_key(|(i, s)| (s.priority, *i))
            .map(|(i, _)| i)
            .expect("essential sections fit, so a droppable one exists");
        dropped.push(sections.remove(victim).tag);
        current = estimate(counter, system, &sections);
    }
    Ok(Prompt { system: system.to_string(), sections, token_estimate: current, budget, dropped })
}
