//! Task specs: building a suite, writing and reloading it as JSONL, and the
//! prompts each mode sees.
//!
//! cargo run --example task_suite

use sandbox_rollout::task::{
    load_suite, render_plain_prompt, render_prompts, write_suite, AnswerKey, Document, Placement, TaskSpec,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut inline = TaskSpec::new("capital", "What is the capital of the country in the memo?", AnswerKey::exact("Paris"));
    inline.documents.push(Document { title: "Memo".into(), text: "The trip goes to France.".into() });

    let mut staged = inline.clone();
    staged.id = "capital-files".into();
    staged.placement = Placement::SandboxFiles;

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("tasks.jsonl");
    write_suite(&path, &[inline, staged])?;
    print!("{}", std::fs::read_to_string(&path)?);

    for task in load_suite(&path)? {
        let (_, instance) = render_prompts(&task);
        println!("\n== {} ({:?}) instance prompt:\n{instance}", task.id, task.placement);
    }
    println!("\n== plain-llm prompt:\n{}", render_plain_prompt(&load_suite(&path)?[0]));
    Ok(())
}
