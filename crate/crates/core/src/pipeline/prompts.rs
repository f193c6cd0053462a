//! Prompt templates for the two draft rounds and the verdict call.
//!
//! Template text is reproduced byte-for-byte, including the trailing spaces
//! some lines carry. `\boxed{}` is the literal the model sees.

use std::collections::BTreeMap;

use crate::client::PromptParts;
use crate::types::{BenchmarkKind, ReasoningPath, Sample};

use super::config::{VerdictInput, VerdictVisual};

pub const VERDICT_SYSTEM_PROMPT: &str = "You are a vision-and-language judge. Follow the instructions strictly.";

const TAGGED_REASONING_TAIL: &str = "Please first generate your reasoning process and then provide the user with the answer. Use the following format:\n\n<think>\n... your thinking process here ... \n</think> \n<answer> \n... your final answer (entity(s) or number) ...\n</answer>";

/// Used for ChartQAPro when no per-type template is configured.
pub const DEFAULT_QUESTION_TYPE_TEMPLATE: &str = "Question: {QUESTION}";

/// Chain-of-thought prompt for a selected expert (and for bare-verdict baselines).
pub fn reasoning_prompt(sample: &Sample, type_templates: &BTreeMap<String, String>) -> String {
    let q = &sample.question;
    match sample.benchmark {
        BenchmarkKind::ChartMuseum => format!(
            "Please answer the question using the chart image.\n\nQuestion: {q}\n\n{TAGGED_REASONING_TAIL}"
        ),
        BenchmarkKind::ChartQaPro => {
            let template = sample
                .question_type
                .as_ref()
                .and_then(|t| type_templates.get(t))
                .map(String::as_str)
                .unwrap_or(DEFAULT_QUESTION_TYPE_TEMPLATE);
            let typed = template.replace("{QUESTION}", q);
            format!("{typed}\n\n{TAGGED_REASONING_TAIL}")
        }
        BenchmarkKind::InfographicVqa | BenchmarkKind::HrBench | BenchmarkKind::Custom(_) => format!(
            "Question: {q} Please think step-by-step about the image to answer the question using a single word or phrase enclosed within \\boxed{{}}."
        ),
    }
}

/// Direct short-answer prompt for the first draft round.
pub fn candidate_prompt(sample: &Sample) -> String {
    let q = &sample.question;
    match sample.benchmark {
        BenchmarkKind::HrBench => {
            format!("Question: {q} Answer with the option's letter enclosed within \\boxed{{}}.")
        }
        _ => format!("Question: {q} Answer the question using a single word or phrase enclosed within \\boxed{{}}."),
    }
}

fn count_word(n: usize) -> String {
    const WORDS: [&str; 11] = [
        "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
    ];
    WORDS.get(n).map_or_else(|| n.to_string(), |w| (*w).to_owned())
}

/// User turn of the verdict call. `paths` are already in presentation order
/// and contain only successful generations.
pub fn verdict_user_prompt(
    sample: &Sample,
    paths: &[&ReasoningPath],
    input: VerdictInput,
    visual: VerdictVisual,
) -> String {
    let mut out = format!("Question: \n{}\n", sample.question);
    for (n, path) in paths.iter().enumerate() {
        out.push_str(&format!("--- Model {} ---\n", n + 1));
        if input == VerdictInput::ReasoningPaths {
            out.push_str(&format!("Reasoning: \n{}\n", path.cot_text.trim()));
        }
        out.push_str(&format!(
            "Proposed Answer: {}\n",
            path.extracted.as_deref().unwrap_or("")
        ));
    }

    let seen = match (visual, sample.aux_image.is_some()) {
        (VerdictVisual::ImagePlusAux, true) => "the raw image, the layout-annotated image, ",
        (VerdictVisual::ImagePlusAux, false) | (VerdictVisual::ImageOnly, _) => "the image, ",
        (VerdictVisual::None, _) => "",
    };
    let evidence = match input {
        VerdictInput::ReasoningPaths => "the reasoning",
        VerdictInput::AnswersOnly => "the proposed answers",
    };
    let models = if paths.len() == 1 { "model" } else { "models" };
    let ask = match sample.benchmark {
        BenchmarkKind::ChartQaPro => "please directly give the final answer enclosed within \\boxed{}.",
        BenchmarkKind::HrBench => {
            "please directly give the final answer with the option's letter enclosed within \\boxed{}."
        }
        _ => "please give the final answer using a single word or phrase enclosed within \\boxed{}.",
    };
    out.push_str(&format!(
        "Given {seen}the question, and {evidence} from {} {models}, {ask}",
        count_word(paths.len())
    ));
    out
}

pub fn verdict_prompt(
    sample: &Sample,
    paths: &[&ReasoningPath],
    input: VerdictInput,
    visual: VerdictVisual,
) -> PromptParts {
    let images = match visual {
        VerdictVisual::ImagePlusAux => std::iter::once(sample.image.clone())
            .chain(sample.aux_image.clone())
            .collect(),
        VerdictVisual::ImageOnly => vec![sample.image.clone()],
        VerdictVisual::None => Vec::new(),
    };
    PromptParts {
        system: Some(VERDICT_SYSTEM_PROMPT.to_owned()),
        user: verdict_user_prompt(sample, paths, input, visual),
        images,
    }
}
