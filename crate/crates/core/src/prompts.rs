//! Versioned prompt templates shipped with the crate.
//!
//! Placeholders are written `{{name}}`; unknown placeholders are left as-is.

pub const SYSTEM_GENERATE: &str = include_str!("../prompts/system_generate.v1.txt");
pub const SYSTEM_ANALYST: &str = include_str!("../prompts/system_analyst.v1.txt");
pub const ANALYZE_BEHAVIOR: &str = include_str!("../prompts/analyze_behavior.v1.txt");
pub const INFER_SEMANTICS: &str = include_str!("../prompts/infer_semantics.v1.txt");
pub const CLASS_SUMMARY: &str = include_str!("../prompts/class_summary.v1.txt");
pub const INFER_TYPE: &str = include_str!("../prompts/infer_type.v1.txt");
pub const PARAM_BEHAVIOR: &str = include_str!("../prompts/param_behavior.v1.txt");
pub const CONSOLIDATE: &str = include_str!("../prompts/consolidate.v1.txt");
pub const REPAIR: &str = include_str!("../prompts/repair.v1.txt");
pub const REPAIR_CAUSE: &str = include_str!("../prompts/repair_cause.v1.txt");
pub const REPAIR_QUERY: &str = include_str!("../prompts/repair_query.v1.txt");
pub const REPAIR_CONTEXT: &str = include_str!("../prompts/repair_context.v1.txt");
pub const REASK: &str = include_str!("../prompts/reask.v1.txt");
pub const UNCOVERED: &str = include_str!("../prompts/uncovered.v1.txt");

/// Substitutes `{{key}}` placeholders in a single left-to-right pass.
pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find("{{") {
        out.push_str(&rest[..open]);
        let after = &rest[open + 2..];
        match after.find("}}") {
            Some(close) => {
                let key = &after[..close];
                match vars.iter().find(|(k, _)| *k == key) {
                    Some((_, v)) => out.push_str(v),
                    None => {
                        out.push_str("{{");
                        out.push_str(key);
                        out.push_str("}}");
                    }
                }
                rest = &after[close + 2..];
            }
            None => {
                out.push_str(&rest[open..]);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out.trim_end().to_string()
}
