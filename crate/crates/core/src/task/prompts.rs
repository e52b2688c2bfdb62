use super::{Placement, TaskSpec};

/// System prompt for sandbox mode.
pub const SYSTEM_PROMPT: &str = include_str!("../../resources/prompts/system_prompt.txt");
/// Instance template for sandbox mode; `{problem_statement}` is filled per task.
pub const INSTANCE_TEMPLATE: &str = include_str!("../../resources/prompts/instance_prompt.txt");
/// Single-shot template for plain generation without a sandbox.
pub const PLAIN_TEMPLATE: &str = include_str!("../../resources/prompts/plain_prompt.txt");

const PLACEHOLDER: &str = "{problem_statement}";

fn documents_notice(dir: &str) -> String {
    format!("The documents relevant to this task are stored as text files in {dir}/. Read them to answer the question.")
}

fn inline_documents(task: &TaskSpec) -> String {
    let mut out = String::from("<documents>\n");
    for doc in &task.documents {
        out.push_str(&format!("<document title=\"{}\">\n{}\n</document>\n", doc.title, doc.text));
    }
    out.push_str("</documents>");
    out
}

fn examples_block(task: &TaskSpec) -> String {
    let mut out = String::from("Prior related tasks and their answers:\n");
    for (i, ex) in task.examples.iter().enumerate() {
        out.push_str(&format!("\n<example index=\"{}\">\nTask: {}\nAnswer: {}\n</example>\n", i + 1, ex.task, ex.answer));
    }
    out
}

/// Context, examples, then the problem itself.
fn problem_statement(task: &TaskSpec, inline: bool) -> String {
    let mut parts = Vec::new();
    if !task.documents.is_empty() {
        if inline {
            parts.push(inline_documents(task));
        } else {
            parts.push(documents_notice("/testbed/documents"));
        }
    }
    if !task.examples.is_empty() {
        parts.push(examples_block(task).trim_end().to_string());
    }
    parts.push(task.prompt.clone());
    parts.join("\n\n")
}

/// System and instance prompts for a sandbox episode.
pub fn render_prompts(task: &TaskSpec) -> (String, String) {
    let inline = task.placement == Placement::PromptInline;
    let instance = INSTANCE_TEMPLATE.replacen(PLACEHOLDER, &problem_statement(task, inline), 1);
    (
        SYSTEM_PROMPT.trim_end_matches('\n').to_string(),
        instance.trim_end_matches('\n').to_string(),
    )
}

/// Single user prompt for plain generation; documents are always inline.
pub fn render_plain_prompt(task: &TaskSpec) -> String {
    PLAIN_TEMPLATE
        .replacen(PLACEHOLDER, &problem_statement(task, true), 1)
        .trim_end_matches('\n')
        .to_string()
}

/// Answer from a plain response: the last `Answer:` line, else the whole text.
pub fn plain_answer(response: &str) -> Option<String> {
    let from_marker = response.lines().rev().find_map(|line| {
        let line = line.trim().trim_start_matches(['*', '#', ' ']);
        let lower = line.to_ascii_lowercase();
        lower
            .starts_with("answer:")
            .then(|| line["answer:".len()..].trim().trim_matches('*').trim().to_string())
    });
    let answer = from_marker.unwrap_or_else(|| response.trim().to_string());
    (!answer.is_empty()).then_some(answer)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task::{AnswerKey, Document, InContextExample};

    fn task() -> TaskSpec {
        TaskSpec::new("t", "What is 6*7?", AnswerKey::exact("42"))
    }

    #[test]
    fn empty_examples_fill_template_only() {
        let (system, instance) = render_prompts(&task());
        assert_eq!(system, SYSTEM_PROMPT.trim_end());
        assert_eq!(instance, INSTANCE_TEMPLATE.replace(PLACEHOLDER, "What is 6*7?").trim_end());
        assert!(instance.starts_with("<problem>\nWhat is 6*7?\n</problem>"));
    }

    #[test]
    fn examples_precede_problem_in_order() {
        let mut t = task();
        t.examples = vec![
            InContextExample { task: "first q".into(), answer: "1".into() },
            InContextExample { task: "second q".into(), answer: "2".into() },
        ];
        let (_, instance) = render_prompts(&t);
        let a = instance.find("first q").unwrap();
        let b = instance.find("second q").unwrap();
        let p = instance.find("What is 6*7?").unwrap();
        assert!(a < b && b < p);
    }

    #[test]
    fn sandbox_files_keep_bodies_out_of_the_prompt() {
        let mut t = task();
        t.documents = vec![Document { title: "Intro".into(), text: "SECRET BODY".into() }];
        t.placement = crate::task::Placement::SandboxFiles;
        let (_, instance) = render_prompts(&t);
        assert!(!instance.contains("SECRET BODY"));
        assert!(instance.contains("/testbed/documents/"));
        t.placement = crate::task::Placement::PromptInline;
        let (_, instance) = render_prompts(&t);
        assert!(instance.contains("SECRET BODY"));
        assert!(render_plain_prompt(&t).contains("SECRET BODY"));
    }

    #[test]
    fn plain_answers() {
        assert_eq!(plain_answer("work...\nAnswer: 42").as_deref(), Some("42"));
        assert_eq!(plain_answer("**Answer:** B\n").as_deref(), Some("B"));
        assert_eq!(plain_answer("  just this  ").as_deref(), Some("just this"));
        assert_eq!(plain_answer("   "), None);
    }
}
