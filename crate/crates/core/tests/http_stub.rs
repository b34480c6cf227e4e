//! The live clients against a local stub server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use captain_core::embedding::{Embedder, HttpEmbedder};
use captain_core::llm::{ChatProvider, CompletionRequest, LlmError, Message, OpenAiClient, RetryPolicy};
use serde_json::{json, Value};

#[derive(Debug, Clone)]
struct Captured {
    path: String,
    authorization: Option<String>,
    body: Value,
}

/// Serves one canned `(status, body)` per request, in order, then repeats the
/// last one.
fn stub(responses: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<Captured>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { break };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request_line = String::new();
            if reader.read_line(&mut request_line).unwrap_or(0) == 0 {
                continue;
            }
            let mut length = 0;
            let mut authorization = None;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                let (name, value) = line.split_once(':').unwrap();
                match name.to_ascii_lowercase().as_str() {
                    "content-length" => length = value.trim().parse().unwrap(),
                    "authorization" => authorization = Some(value.trim().to_string()),
                    _ => {}
                }
            }
            let mut body = vec![0; length];
            reader.read_exact(&mut body).unwrap();
            let n = {
                let mut log = log.lock().unwrap();
                log.push(Captured {
                    path: request_line.split_whitespace().nth(1).unwrap_or_default().to_string(),
                    authorization,
                    body: serde_json::from_slice(&body).unwrap_or(Value::Null),
                });
                log.len()
            };
            let (status, text) = &responses[(n - 1).min(responses.len() - 1)];
            let reply = format!(
                "HTTP/1.1 {status} Stub\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
                text.len()
            );
            stream.write_all(reply.as_bytes()).unwrap();
        }
    });
    (url, seen)
}

fn fast_retry(max_retries: u32) -> RetryPolicy {
    RetryPolicy {
        max_retries,
        base_delay: Duration::from_millis(5),
        max_delay: Duration::from_millis(20),
    }
}

fn request() -> CompletionRequest {
    CompletionRequest {
        model: "gpt-4".into(),
        messages: vec![
            Message::system("You are the captain."),
            Message::user("Solve: 2 + 2\n\n```python\nprint(2 + 2)\n```"),
            Message::assistant("Plan first."),
            Message::user("  trailing and leading space kept  "),
        ],
        temperature: 0.0,
        max_tokens: 256,
        request_tag: "captain".into(),
    }
}

fn ok_body(content: &str) -> String {
    json!({
        "choices": [{"message": {"role": "assistant", "content": content}}],
        "usage": {"prompt_tokens": 10, "completion_tokens": 2, "total_tokens": 12}
    })
    .to_string()
}

#[test]
fn retries_rate_limits_then_succeeds() {
    let (url, seen) = stub(vec![
        (429, "{\"error\":\"slow down\"}".into()),
        (429, "{\"error\":\"slow down\"}".into()),
        (200, ok_body("4")),
    ]);
    let client = OpenAiClient::new(&url, "sk-test", Duration::from_secs(5), fast_retry(3));
    let completion = client.complete(&request()).unwrap();
    assert_eq!(completion.content, "4");
    assert_eq!(completion.usage.unwrap().total_tokens, 12);
    let seen = seen.lock().unwrap();
    assert_eq!(seen.len(), 3);
    assert!(seen.iter().all(|c| c.path == "/v1/chat/completions"));
    assert_eq!(seen[0].authorization.as_deref(), Some("Bearer sk-test"));
    assert!(seen.windows(2).all(|w| w[0].body == w[1].body));
}

#[test]
fn messages_reach_the_wire_unchanged() {
    let (url, seen) = stub(vec![(200, ok_body("ok"))]);
    let client = OpenAiClient::new(&url, "k", Duration::from_secs(5), fast_retry(0));
    let req = request();
    client.complete(&req).unwrap();
    let body = seen.lock().unwrap()[0].body.clone();
    assert_eq!(body["model"], "gpt-4");
    assert_eq!(body["max_tokens"], 256);
    let sent: Vec<Message> = serde_json::from_value(body["messages"].clone()).unwrap();
    assert_eq!(sent, req.messages);
    assert!(body.get("request_tag").is_none());
}

#[test]
fn client_errors_are_not_retried() {
    let (url, seen) = stub(vec![(400, "{\"error\":\"bad model\"}".into())]);
    let client = OpenAiClient::new(&url, "k", Duration::from_secs(5), fast_retry(3));
    match client.complete(&request()) {
        Err(LlmError::Http { status: 400, body }) => assert!(body.contains("bad model")),
        other => panic!("expected HTTP 400, got {other:?}"),
    }
    assert_eq!(seen.lock().unwrap().len(), 1);
}

#[test]
fn persistent_server_errors_exhaust_retries() {
    let (url, seen) = stub(vec![(503, "{}".into())]);
    let client = OpenAiClient::new(&url, "k", Duration::from_secs(5), fast_retry(2));
    match client.complete(&request()) {
        Err(LlmError::ProviderExhausted { attempts: 3, .. }) => {}
        other => panic!("expected exhaustion after 3 attempts, got {other:?}"),
    }
    assert_eq!(seen.lock().unwrap().len(), 3);
}

#[test]
fn missing_content_is_a_decode_error() {
    let (url, _) = stub(vec![(200, "{\"choices\":[]}".into())]);
    let client = OpenAiClient::new(&url, "k", Duration::from_secs(5), fast_retry(0));
    assert!(matches!(client.complete(&request()), Err(LlmError::Decode(_))));
}

#[test]
fn embedding_endpoint() {
    let (url, seen) = stub(vec![
        (429, "{}".into()),
        (200, json!({"data": [{"embedding": [0.5, -1.0, 2.0]}]}).to_string()),
    ]);
    let embedder = HttpEmbedder::new(&url, "k", Some("all-mpnet-base-v2".into()), Duration::from_secs(5), fast_retry(2));
    let v = embedder.embed("a role description").unwrap();
    assert_eq!(v.values(), &[0.5, -1.0, 2.0]);
    let seen = seen.lock().unwrap();
    assert_eq!(seen.len(), 2);
    assert_eq!(seen[1].path, "/v1/embeddings");
    assert_eq!(seen[1].body["model"], "all-mpnet-base-v2");
    assert_eq!(seen[1].body["input"][0], "a role description");
}
