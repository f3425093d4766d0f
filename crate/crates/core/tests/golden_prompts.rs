//! Golden-file pins for the verbatim prompt templates. The fixtures hold
//! the templates with their `{query}` / `{docs}` / `{doc}` substitution
//! sites intact; any byte change outside a substitution site fails here.
//!
//! Regenerate with `UPDATE_GOLDEN=1 cargo test -p reljudge --test
//! golden_prompts` after an intentional template change.

use std::path::PathBuf;

use reljudge::rollout::prompts;

fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

fn check(name: &str, actual: &str) {
    let path = golden_dir().join(name);
    if std::env::var("UPDATE_GOLDEN").is_ok() {
        std::fs::write(&path, actual).unwrap();
        return;
    }
    let expected = std::fs::read_to_string(&path)
        .unwrap_or_else(|e| panic!("missing golden file {}: {e}", path.display()));
    assert!(
        expected == actual,
        "{name} diverges from its golden file; run with UPDATE_GOLDEN=1 if intentional"
    );
}

#[test]
fn round1_templates_match_golden() {
    check("round1_system.txt", prompts::ROUND1_SYSTEM);
    check("round1_user.txt", prompts::ROUND1_USER_TEMPLATE);
}

#[test]
fn round2_template_matches_golden() {
    check("round2_user.txt", prompts::ROUND2_USER_TEMPLATE);
}

#[test]
fn umbrela_templates_match_golden() {
    check("umbrela_system.txt", prompts::UMBRELA_SYSTEM);
    check("umbrela_user.txt", prompts::UMBRELA_USER_TEMPLATE);
}

#[test]
fn rendering_touches_only_substitution_sites() {
    let messages = prompts::render_round1_prompt("QQ", &["D1".into(), "D2".into()]);
    let expected = prompts::ROUND1_USER_TEMPLATE
        .replace("{query}", "QQ")
        .replace("{docs}", "\n1. D1\n2. D2");
    assert_eq!(messages[1].content, expected);

    let round2 = prompts::render_round2_messages(&messages, "CAND");
    let expected2 = prompts::ROUND2_USER_TEMPLATE.replace("{doc}", "CAND");
    assert_eq!(round2.last().unwrap().content, expected2);

    let umbrela = prompts::render_umbrela_prompt("QQ", "CAND");
    let expected3 = prompts::UMBRELA_USER_TEMPLATE
        .replace("{query}", "QQ")
        .replace("{doc}", "CAND");
    assert_eq!(umbrela[1].content, expected3);
}
