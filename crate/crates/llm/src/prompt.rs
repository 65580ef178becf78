use mico_policy::{PolicyArtifact, PolicyKind, DIALECT};
use serde::{Deserialize, Serialize};

use crate::text::{entry_of, rename_ident};
use crate::LlmError;

/// One exemplar as it appears in the prompt, entry renamed to `label`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exemplar {
    pub label: String,
    pub source: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub kind: PolicyKind,
    pub role_des: String,
    pub task_des: String,
    /// Best first, as ranked by score.
    pub exemplars: Vec<Exemplar>,
    /// Upper end of the selector return range; `None` for priority prompts.
    pub n_options: Option<usize>,
    pub rendered: String,
}

impl PromptBundle {
    /// Name of the stub the model is asked to complete.
    pub fn target(&self) -> String {
        format!("{}_v{}", base_name(self.kind), self.exemplars.len())
    }

    pub fn best(&self) -> &Exemplar {
        &self.exemplars[0]
    }
}

pub(crate) fn base_name(kind: PolicyKind) -> &'static str {
    match kind {
        PolicyKind::Priority => "priority",
        PolicyKind::Selector => "heuristic_selector",
    }
}

fn args(kind: PolicyKind) -> &'static str {
    match kind {
        PolicyKind::Priority => "bin, item",
        PolicyKind::Selector => "condition",
    }
}

/// Labels exemplars `base_v0..` worst to best and returns them best first.
fn label(kind: PolicyKind, top: &[PolicyArtifact]) -> Result<Vec<Exemplar>, LlmError> {
    if top.is_empty() {
        return Err(LlmError::EmptyExemplars);
    }
    let base = base_name(kind);
    let m = top.len();
    top.iter()
        .enumerate()
        .map(|(rank, a)| {
            if a.kind != kind {
                return Err(LlmError::WrongKind { expected: kind, found: a.kind });
            }
            let entry = entry_of(&a.source, base).ok_or(LlmError::MissingEntry(base))?;
            let label = format!("{base}_v{}", m - 1 - rank);
            Ok(Exemplar { source: rename_ident(&a.source, entry, &label), label })
        })
        .collect()
}

fn listing(kind: PolicyKind, exemplars: &[Exemplar]) -> String {
    let m = exemplars.len();
    let base = base_name(kind);
    let mut out = String::from("```rhai\n");
    for e in exemplars.iter().rev() {
        out.push_str(e.source.trim_end());
        out.push('\n');
    }
    out.push_str(&format!("fn {base}_v{m}({}) {{\n    // Improved version of `{base}_v{}`.\n```", args(kind), m - 1));
    out
}

fn existing(kind: PolicyKind, m: usize) -> String {
    let base = base_name(kind);
    if m == 1 {
        format!("Existing {base}_v0 function for reference:")
    } else {
        format!("Existing {base}_v0 to {base}_v{} functions for reference:", m - 1)
    }
}

fn assemble(parts: &[&str]) -> String {
    parts.iter().filter(|p| !p.is_empty()).copied().collect::<Vec<_>>().join("\n\n") + "\n"
}

/// Scheduler template for intra-option priority functions. `top` is ordered
/// best first; the listing runs worst to best so the stub follows the best.
pub fn render_miner_prompt(top: &[PolicyArtifact]) -> Result<PromptBundle, LlmError> {
    let kind = PolicyKind::Priority;
    let exemplars = label(kind, top)?;
    let intro = format!(
        "Given the existing priority_v0 function, please generate an optimized version named priority_v*. \
This new version should be more complex and efficient, incorporating multiple conditional logic and loops as necessary. \
The function should calculate priorities for items to be added to bins, considering the item size and bin capacities. \
Ensure the function is significantly different and more advanced than the prior versions. \
Only the Rhai code for the function is required, without any additional descriptions or annotations. {}",
        existing(kind, exemplars.len())
    );
    let outro = "Your task is to create the optimized priority_v* function based on the guidelines above. \
Remember, only the Rhai function code is needed.";
    let code = listing(kind, &exemplars);
    let rendered = assemble(&[&intro, &code, outro, DIALECT]);
    Ok(PromptBundle {
        kind,
        role_des: String::new(),
        task_des: format!("{intro}\n\n{outro}"),
        exemplars,
        n_options: None,
        rendered,
    })
}

/// "1 or 2 or 3 or 4" style range text.
fn range_text(n: usize) -> String {
    (1..=n).map(|i| i.to_string()).collect::<Vec<_>>().join(" or ")
}

/// Context-aware scheduler template for the option selector.
pub fn render_composer_prompt(top: &[PolicyArtifact], n_options: usize) -> Result<PromptBundle, LlmError> {
    if n_options == 0 {
        return Err(LlmError::InvalidConfig("selector needs at least one option".into()));
    }
    let kind = PolicyKind::Selector;
    let exemplars = label(kind, top)?;
    let role = "You are a leading expert on this topic.".to_string();
    let intro = format!(
        "Given the existing heuristic_selector_v0 function, please generate an optimized version named heuristic_selector_v*. \
This new version should be more complex and efficient, incorporating multiple conditional logic and loops as necessary. \
Ensure the function is significantly different and more advanced than the prior versions. {}",
        existing(kind, exemplars.len())
    );
    let outro = format!(
        "The \"heuristic_selector\" function should only return {}. \
In order to ensure the result, do not use any \"random\" in \"heuristic_selector\" function. \
Your task is to create the optimized heuristic_selector_v* function based on the guidelines above. \
Remember, only the Rhai function code is needed.",
        range_text(n_options)
    );
    let code = listing(kind, &exemplars);
    let rendered = assemble(&[&format!("{role} {intro}"), &code, &outro, DIALECT]);
    Ok(PromptBundle {
        kind,
        role_des: role,
        task_des: format!("{intro}\n\n{outro}"),
        exemplars,
        n_options: Some(n_options),
        rendered,
    })
}

#[cfg(test)]
mod tests {
    use mico_policy::fixtures;

    use super::*;

    #[test]
    fn seed_prompt() {
        let p = render_miner_prompt(&[PolicyArtifact::priority(fixtures::SEED_PRIORITY)]).unwrap();
        assert!(p.rendered.contains("score = -(bin[0] - item[0])"));
        assert!(p.rendered.contains("fn priority_v1(bin, item) {\n    // Improved version of `priority_v0`."));
        assert!(p.rendered.starts_with("Given the existing priority_v0 function"));
        assert!(p.rendered.contains(DIALECT));
        assert_eq!(p.target(), "priority_v1");
    }

    #[test]
    fn best_exemplar_comes_last() {
        let best = PolicyArtifact::priority(fixtures::TIGHT_FIT);
        let worse = PolicyArtifact::priority(fixtures::SEED_PRIORITY);
        let p = render_miner_prompt(&[best, worse]).unwrap();
        let seed_at = p.rendered.find("fn priority_v0(").unwrap();
        let best_at = p.rendered.find("fn priority_v1(").unwrap();
        let stub_at = p.rendered.find("fn priority_v2(").unwrap();
        assert!(seed_at < best_at && best_at < stub_at);
        assert!(p.rendered.contains("Existing priority_v0 to priority_v1 functions"));
        assert_eq!(p.best().label, "priority_v1");
    }

    #[test]
    fn composer_prompt() {
        let p = render_composer_prompt(&[PolicyArtifact::selector(fixtures::SEED_SELECTOR)], 4).unwrap();
        assert!(p.rendered.starts_with("You are a leading expert on this topic. Given the existing heuristic_selector_v0"));
        assert!(p.rendered.contains("should only return 1 or 2 or 3 or 4."));
        assert!(p.rendered.contains(fixtures::SEED_SELECTOR.trim_end()));
        let p3 = render_composer_prompt(&[PolicyArtifact::selector(fixtures::SEED_SELECTOR)], 3).unwrap();
        assert!(p3.rendered.contains("should only return 1 or 2 or 3."));
    }

    #[test]
    fn errors() {
        assert!(matches!(render_miner_prompt(&[]), Err(LlmError::EmptyExemplars)));
        let sel = PolicyArtifact::selector(fixtures::SEED_SELECTOR);
        assert!(matches!(render_miner_prompt(&[sel]), Err(LlmError::WrongKind { .. })));
    }
}
