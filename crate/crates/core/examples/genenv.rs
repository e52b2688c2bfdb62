//! Turning a long-context dataset into sandbox tasks: documents are split at
//! headings, mixed with seeded distractors, and written as a suite plus manifest.
//!
//! cargo run --example genenv

use sandbox_rollout::configurator::{genenv, parse_records, split_context, ConfiguratorOptions, SplitPolicy};
use sandbox_rollout::task::Document;
use serde_json::json;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let long = Document {
        title: "Annual Report".into(),
        text: format!("# Summary\n{}\n# Revenue\nRevenue was 12 million.\n# Outlook\n{}\n", "Intro text. ".repeat(900), "More. ".repeat(900)),
    };
    let parts = split_context(std::slice::from_ref(&long), &SplitPolicy::default())?;
    for p in &parts {
        println!("{:<30} {:>6} bytes", p.title, p.text.len());
    }

    let mut lines = String::new();
    for (i, company) in ["Acme", "Globex", "Initech", "Umbrella", "Hooli", "Stark"].iter().enumerate() {
        let record = json!({
            "id": company.to_lowercase(),
            "context": [{"title": format!("{company} report"), "text": format!("# Revenue\n{company} made {} million.\n", i + 10)}],
            "subtasks": [
                {"question": format!("What was {company}'s revenue in millions?"), "answer": (i + 10).to_string()},
                {"question": "And double that?", "answer": (2 * (i + 10)).to_string()}
            ],
            "domain": "finance"
        });
        lines.push_str(&format!("{record}\n"));
    }
    let records = parse_records(&lines)?;
    let out = tempfile::tempdir()?;
    let (suite, manifest) = genenv(&records, 7, &ConfiguratorOptions::default(), out.path())?;
    println!("\n{} tasks in {}", manifest.tasks.len(), suite.display());
    for task in &manifest.tasks {
        let files: Vec<&str> = task.files.iter().map(|f| f.name.as_str()).collect();
        println!("{:<12} files {files:?}", task.id);
    }
    Ok(())
}
