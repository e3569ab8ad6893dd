//! The live backend against a throwaway HTTP server on localhost.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::mpsc;
use std::thread;
use std::time::Duration;

use serde_json::{json, Value};
use typeforge::llm::{ChatBackend, ChatRequest, HttpBackend, HttpConfig, LlmError, Message};

struct Seen {
    auth: Option<String>,
    body: Value,
}

fn read_request(stream: &mut TcpStream) -> Seen {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut length = 0;
    let mut auth = None;
    loop {
        let mut line = String::new();
        reader.read_line(&mut line).unwrap();
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((name, value)) = line.split_once(':') {
            match name.to_ascii_lowercase().as_str() {
                "content-length" => length = value.trim().parse().unwrap(),
                "authorization" => auth = Some(value.trim().to_string()),
                _ => {}
            }
        }
    }
    let mut body = vec![0; length];
    reader.read_exact(&mut body).unwrap();
    Seen { auth, body: serde_json::from_slice(&body).unwrap() }
}

/// Serves the given (status, body) replies in order, one per connection.
fn serve(replies: Vec<(u16, String)>) -> (String, mpsc::Receiver<Seen>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for (status, body) in replies {
            let (mut stream, _) = listener.accept().unwrap();
            tx.send(read_request(&mut stream)).unwrap();
            let reply = format!("HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}", body.len());
            stream.write_all(reply.as_bytes()).unwrap();
        }
    });
    (url, rx)
}

fn completion(text: &str) -> String {
    json!({"choices": [{"message": {"role": "assistant", "content": text}}]}).to_string()
}

fn request() -> ChatRequest {
    ChatRequest {
        messages: vec![Message::system("be terse"), Message::user("type of x?")],
        model: "test-model".into(),
        temperature: 0.0,
        max_output_tokens: 64,
    }
}

fn config(url: String) -> HttpConfig {
    let mut config = HttpConfig::new(url);
    config.api_key = Some("secret".into());
    config.timeout = Duration::from_secs(5);
    config.retry.base_delay = Duration::from_millis(1);
    config
}

#[test]
fn sends_chat_completion_json_with_bearer_token() {
    let (url, seen) = serve(vec![(200, completion("KIND: primitive int"))]);
    let backend = HttpBackend::new(config(url));
    assert_eq!(backend.chat(&request()).unwrap(), "KIND: primitive int");
    let seen = seen.recv().unwrap();
    assert_eq!(seen.auth.as_deref(), Some("Bearer secret"));
    assert_eq!(seen.body["model"], "test-model");
    assert_eq!(seen.body["temperature"], 0.0);
    assert_eq!(seen.body["max_tokens"], 64);
    assert_eq!(seen.body["messages"][0], json!({"role": "system", "content": "be terse"}));
    assert_eq!(seen.body["messages"][1]["role"], "user");
}

#[test]
fn server_errors_are_retried_then_succeed() {
    let (url, seen) = serve(vec![(503, "{}".into()), (429, "{}".into()), (200, completion("ok"))]);
    let backend = HttpBackend::new(config(url));
    assert_eq!(backend.chat(&request()).unwrap(), "ok");
    assert_eq!(backend.retries(), 2);
    assert_eq!(seen.iter().take(3).count(), 3);
}

#[test]
fn client_error_surfaces_status_and_body() {
    let (url, _seen) = serve(vec![(401, r#"{"error":"bad key"}"#.into())]);
    let backend = HttpBackend::new(config(url));
    match backend.chat(&request()) {
        Err(LlmError::Http { status, body }) => {
            assert_eq!(status, 401);
            assert!(body.contains("bad key"));
        }
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(backend.retries(), 0);
}

#[test]
fn unreachable_endpoint_is_a_transport_error() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let mut config = config(format!("http://127.0.0.1:{port}/v1/chat/completions"));
    config.retry.max_retries = 1;
    let backend = HttpBackend::new(config);
    assert!(matches!(backend.chat(&request()), Err(LlmError::Transport(_))));
    assert_eq!(backend.retries(), 1);
}
