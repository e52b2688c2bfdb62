//! Scoring answers: exact match, option F1, ROUGE-L, numeric comparison, and a
//! custom evaluator.
//!
//! cargo run --example rewards

use sandbox_rollout::rewards::{
    parse_options, score_answer, score_binary, score_choice_f1, score_exact, score_rouge_l, Comparator,
    EvaluatorRegistry,
};
use sandbox_rollout::task::{AnswerKey, AnswerKind, Gold, Normalization};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fold = Normalization { case_fold: true, ..Default::default() };
    println!("exact 'paris' vs 'Paris' with case folding: {}", score_exact("paris", "Paris", &fold));

    let answer = parse_options("The answer is A and C");
    println!("options {answer:?} vs [A, B, C]: F1 {:.3}", score_choice_f1(&answer, &parse_options("A,B,C")));

    println!("ROUGE-L: {:.3}", score_rouge_l("the cat sat on the mat", "a cat was on the mat"));
    let numeric = Comparator::parse("numeric", Some(1e-6))?;
    println!("0.5 vs 1/2: {:?}", score_binary("0.5", "1/2", &numeric));

    let mut evaluators = EvaluatorRegistry::new();
    evaluators.register("length", |answer: &str, _: &AnswerKey| {
        let score = (answer.len() as f64 / 20.0).min(1.0);
        (score, format!("{} characters", answer.len()))
    });
    let key = AnswerKey {
        kind: AnswerKind::External,
        gold: Some(Gold::Text(String::new())),
        normalization: Normalization::default(),
        evaluator: Some("length".into()),
    };
    let outcome = score_answer("a fairly long answer", &key, &evaluators)?;
    println!("external evaluator: {} ({})", outcome.value, outcome.detail);
    Ok(())
}
