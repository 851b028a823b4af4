//! Wire-format checks against a throwaway server on the loopback interface.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::mpsc;
use std::thread;
use std::time::Duration;

use crossrag_core::llm::{BackendKind, ChatRequest, HttpBackend, LlmClient, LlmError, ProviderConfig};
use serde_json::Value as Json;

struct Captured {
    headers: Vec<(String, String)>,
    body: Json,
}

/// Serves one request with `status` and `reply`, after `delay`.
fn serve_once(status: u16, reply: &str, delay: Duration) -> (String, mpsc::Receiver<Captured>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let reply = reply.to_owned();
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        let mut reader = BufReader::new(stream.try_clone().unwrap());
        let mut headers = Vec::new();
        let mut line = String::new();
        reader.read_line(&mut line).unwrap();
        loop {
            line.clear();
            reader.read_line(&mut line).unwrap();
            let l = line.trim_end();
            if l.is_empty() {
                break;
            }
            let (k, v) = l.split_once(':').unwrap();
            headers.push((k.trim().to_ascii_lowercase(), v.trim().to_owned()));
        }
        let len: usize = headers
            .iter()
            .find(|(k, _)| k == "content-length")
            .unwrap()
            .1
            .parse()
            .unwrap();
        let mut body = vec![0; len];
        reader.read_exact(&mut body).unwrap();
        let _ = tx.send(Captured {
            headers,
            body: serde_json::from_slice(&body).unwrap(),
        });
        thread::sleep(delay);
        let mut stream = stream;
        let _ = write!(
            stream,
            "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
            reply.len()
        );
    });
    (url, rx)
}

fn request() -> ChatRequest {
    let mut r = ChatRequest::new("local-model", "be brief".into(), "torque?".into());
    r.max_tokens = 64;
    r
}

#[test]
fn sends_chat_completion_with_bearer_key() {
    let (url, rx) = serve_once(
        200,
        r#"{"choices":[{"message":{"role":"assistant","content":"45 Nm"}}],"usage":{"prompt_tokens":12,"completion_tokens":3}}"#,
        Duration::ZERO,
    );
    let var = "CROSSRAG_HTTP_TEST_KEY";
    std::env::set_var(var, "sk-test-123");
    let mut config = ProviderConfig::http(BackendKind::RemoteHttp, &url);
    config.api_key_env = Some(var.into());
    config.model = Some("wire-name".into());
    let resp = HttpBackend::from_config(&config).unwrap().complete(&request()).unwrap();
    assert_eq!(resp.text, "45 Nm");
    assert_eq!((resp.prompt_tokens, resp.completion_tokens), (Some(12), Some(3)));

    let got = rx.recv().unwrap();
    assert!(got
        .headers
        .contains(&("authorization".into(), "Bearer sk-test-123".into())));
    assert_eq!(
        got.body,
        serde_json::json!({
            "model": "wire-name",
            "messages": [{"role": "system", "content": "be brief"}, {"role": "user", "content": "torque?"}],
            "temperature": 0.0,
            "max_tokens": 64
        })
    );
}

#[test]
fn local_server_without_key() {
    let (url, rx) = serve_once(200, r#"{"message":{"content":"ok"}}"#, Duration::ZERO);
    let mut config = ProviderConfig::http(BackendKind::LocalHttp, &url);
    config.response_path = Some("message.content".into());
    let resp = HttpBackend::from_config(&config).unwrap().complete(&request()).unwrap();
    assert_eq!(resp.text, "ok");
    let got = rx.recv().unwrap();
    assert!(got.headers.iter().all(|(k, _)| k != "authorization"));
    assert_eq!(got.body["model"], "local-model");
}

#[test]
fn status_and_body_errors() {
    let (url, _rx) = serve_once(503, r#"{"error":"overloaded"}"#, Duration::ZERO);
    let err = HttpBackend::from_config(&ProviderConfig::http(BackendKind::RemoteHttp, &url))
        .unwrap()
        .complete(&request())
        .unwrap_err();
    assert!(
        matches!(err, LlmError::HttpStatus(503, ref b) if b.contains("overloaded")),
        "{err:?}"
    );

    let (url, _rx) = serve_once(200, r#"{"choices":[]}"#, Duration::ZERO);
    let err = HttpBackend::from_config(&ProviderConfig::http(BackendKind::RemoteHttp, &url))
        .unwrap()
        .complete(&request())
        .unwrap_err();
    assert!(matches!(err, LlmError::BadResponse(_)), "{err:?}");
}

#[test]
fn missing_key_variable_is_a_config_error() {
    let mut config = ProviderConfig::http(BackendKind::RemoteHttp, "http://127.0.0.1:9/");
    config.api_key_env = Some("CROSSRAG_HTTP_TEST_UNSET_VAR".into());
    assert!(matches!(HttpBackend::from_config(&config), Err(LlmError::Config(_))));
}

#[test]
fn slow_server_times_out() {
    // the single server only answers the first attempt, and too late
    let (url, _rx) = serve_once(
        200,
        r#"{"choices":[{"message":{"content":"late"}}]}"#,
        Duration::from_millis(1500),
    );
    let mut config = ProviderConfig::http(BackendKind::LocalHttp, &url);
    config.timeout_secs = 0.3;
    let err = HttpBackend::from_config(&config)
        .unwrap()
        .complete(&request())
        .unwrap_err();
    assert!(matches!(err, LlmError::Timeout | LlmError::Transport(_)), "{err:?}");
}
