use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::PathBuf;
use std::sync::mpsc;
use std::time::Duration;

use mico_llm::{
    render_composer_prompt, render_miner_prompt, CompletionBackend, Gateway, LlmError, MockBackend, RemoteBackend,
    SamplerConfig,
};
use mico_policy::{fixtures, validate, PolicyArtifact, PolicyKind, ProbeSuite, Sandbox, Status};
use proptest::prelude::*;

fn golden(name: &str, actual: &str) {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, actual).unwrap();
    }
    let expected = std::fs::read_to_string(&path).unwrap_or_else(|_| panic!("missing golden file {}", path.display()));
    assert_eq!(actual, expected, "{name} drifted; rerun with UPDATE_GOLDEN=1 if intended");
}

#[test]
fn golden_prompts() {
    let seed = PolicyArtifact::priority(fixtures::SEED_PRIORITY);
    golden("miner_seed.txt", &render_miner_prompt(std::slice::from_ref(&seed)).unwrap().rendered);
    let two = [PolicyArtifact::priority(fixtures::TIGHT_FIT), seed];
    golden("miner_top2.txt", &render_miner_prompt(&two).unwrap().rendered);
    let sel = PolicyArtifact::selector(fixtures::SEED_SELECTOR);
    golden("composer_seed.txt", &render_composer_prompt(&[sel], 4).unwrap().rendered);
}

/// Serves canned HTTP responses in order and forwards each request body.
fn serve(responses: Vec<(u16, String)>) -> (String, mpsc::Receiver<String>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let (tx, rx) = mpsc::channel();
    std::thread::spawn(move || {
        for (status, body) in responses {
            let (mut stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" || line.is_empty() {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            let _ = tx.send(String::from_utf8(buf).unwrap());
            let resp = format!(
                "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            );
            stream.write_all(resp.as_bytes()).unwrap();
        }
    });
    (url, rx)
}

fn completion(content: &str, finish: &str) -> String {
    serde_json::json!({
        "choices": [{"message": {"role": "assistant", "content": content}, "finish_reason": finish}],
        "usage": {"completion_tokens": 42}
    })
    .to_string()
}

fn prompt() -> mico_llm::PromptBundle {
    render_miner_prompt(&[PolicyArtifact::priority(fixtures::SEED_PRIORITY)]).unwrap()
}

#[test]
fn remote_extracts_code_and_retries() {
    let (url, bodies) = serve(vec![
        (503, "{}".into()),
        (200, completion("Idea: prefer tight bins.\n```rhai\nfn priority_v1(bin, item) { -(bin[1] - item[1]) }\n```\nThanks", "stop")),
    ]);
    let remote = RemoteBackend::new(url, Some("k".into()), Duration::from_secs(5)).unwrap().with_backoff(Duration::from_millis(1));
    let cfg = SamplerConfig { token_budget: 777, ..Default::default() };
    let g = Gateway::new(remote, cfg).unwrap();
    assert_eq!(g.sample(&prompt(), 0).unwrap(), "fn priority_v1(bin, item) { -(bin[1] - item[1]) }\n");
    for body in bodies.try_iter() {
        let v: serde_json::Value = serde_json::from_str(&body).unwrap();
        assert!(v["max_tokens"].as_u64().unwrap() <= 777);
    }
}

#[test]
fn remote_failures() {
    let (url, _) = serve(vec![(500, "{}".into()), (500, "{}".into())]);
    let remote = RemoteBackend::new(url, None, Duration::from_secs(5)).unwrap().with_backoff(Duration::from_millis(1));
    let cfg = SamplerConfig { retries: 1, ..Default::default() };
    assert!(matches!(remote.complete(&prompt(), &cfg, 0), Err(LlmError::BackendUnavailable(_))));

    let (url, _) = serve(vec![(200, completion("fn priority(b, i) {", "length"))]);
    let remote = RemoteBackend::new(url, None, Duration::from_secs(5)).unwrap();
    assert_eq!(remote.complete(&prompt(), &SamplerConfig::default(), 0), Err(LlmError::BudgetExceeded { limit: 1000 }));

    let dead = RemoteBackend::new("http://127.0.0.1:1/x", None, Duration::from_millis(200)).unwrap().with_backoff(Duration::from_millis(1));
    let cfg = SamplerConfig { retries: 2, ..Default::default() };
    assert!(matches!(dead.complete(&prompt(), &cfg, 0), Err(LlmError::BackendUnavailable(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    // Chains of mock generations, each fed back as the best exemplar, keep
    // compiling and stay valid.
    #[test]
    fn mock_outputs_compile(seed in 0u64..1000, fixture in 0usize..5, gens in 1usize..12) {
        let sb = Sandbox::default();
        let g = Gateway::new(MockBackend::new(seed), SamplerConfig::default()).unwrap();
        let suite = ProbeSuite::standard(4);
        let mut best = PolicyArtifact::priority(fixtures::PRIORITY_FIXTURES[fixture].1);
        for n in 0..gens {
            let src = g.sample(&render_miner_prompt(std::slice::from_ref(&best)).unwrap(), n as u64).unwrap();
            let mut cand = PolicyArtifact::priority(src);
            let report = validate(&sb, &mut cand, &suite);
            prop_assert!(report.compiled, "{:?}\n{}", report.verdict, cand.source);
            prop_assert_eq!(&cand.status, &Status::Valid);
            best = cand;
        }
        let mut sel = PolicyArtifact::selector(fixtures::COMPOSER_SELECTOR);
        for n in 0..gens {
            let src = g.sample(&render_composer_prompt(std::slice::from_ref(&sel), 3).unwrap(), n as u64).unwrap();
            let compiled = sb.compile_source(PolicyKind::Selector, &src);
            prop_assert!(compiled.is_ok(), "{:?}\n{}", compiled.err(), src);
            sel = PolicyArtifact::selector(src);
        }
    }
}
