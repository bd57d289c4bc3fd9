//! Minimal chat-completion stub server for offline tests.
//!
//! Binds an ephemeral localhost port, answers every POST with a canned
//! response speaking the same wire format as the real endpoint, and records
//! what it received.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use serde_json::json;

use crate::error::{Error, Result};

/// What the stub answers with.
#[derive(Debug, Clone)]
pub enum StubResponse {
    /// A well-formed chat completion whose message content is the given text.
    ChatContent(String),
    /// A raw HTTP response with the given status and JSON body.
    Raw { status: u16, body: String },
}

/// One recorded request.
#[derive(Debug, Clone)]
pub struct StubRequest {
    pub path: String,
    pub body: String,
    pub authorization: Option<String>,
}

pub struct StubServer {
    base_url: String,
    requests: Arc<Mutex<Vec<StubRequest>>>,
    stop: Arc<AtomicBool>,
    port: u16,
    handle: Option<JoinHandle<()>>,
}

impl StubServer {
    /// Starts the server on an ephemeral port.
    pub fn start(response: StubResponse) -> Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let port = listener.local_addr()?.port();
        let requests: Arc<Mutex<Vec<StubRequest>>> = Arc::default();
        let stop = Arc::new(AtomicBool::new(false));

        let thread_requests = Arc::clone(&requests);
        let thread_stop = Arc::clone(&stop);
        let handle = std::thread::spawn(move || {
            for stream in listener.incoming() {
                if thread_stop.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { break };
                if handle_connection(stream, &response, &thread_requests).is_err() {
                    // A malformed or dropped connection only affects that request.
                    continue;
                }
            }
        });

        Ok(StubServer {
            base_url: format!("http://127.0.0.1:{port}"),
            requests,
            stop,
            port,
            handle: Some(handle),
        })
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    pub fn requests(&self) -> Vec<StubRequest> {
        self.requests.lock().expect("stub lock").clone()
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // Unblock the accept loop.
        let _ = TcpStream::connect(("127.0.0.1", self.port));
        if let Some(handle) = self.handle.take() {
            let _ = handle.join();
        }
    }
}

fn handle_connection(
    stream: TcpStream,
    response: &StubResponse,
    requests: &Mutex<Vec<StubRequest>>,
) -> Result<()> {
    let mut reader = BufReader::new(stream);

    let mut request_line = String::new();
    reader.read_line(&mut request_line)?;
    let path = request_line
        .split_whitespace()
        .nth(1)
        .unwrap_or("")
        .to_string();

    let mut content_length = 0usize;
    let mut authorization = None;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line)? == 0 {
            break;
        }
        let trimmed = line.trim_end();
        if trimmed.is_empty() {
            break;
        }
        if let Some((name, value)) = trimmed.split_once(':') {
            let name = name.trim().to_ascii_lowercase();
            let value = value.trim();
            if name == "content-length" {
                content_length = value
                    .parse()
                    .map_err(|_| Error::Network("stub received a bad content-length".into()))?;
            } else if name == "authorization" {
                authorization = Some(value.to_string());
            }
        }
    }

    let mut body = vec![0u8; content_length];
    reader.read_exact(&mut body)?;
    let body = String::from_utf8_lossy(&body).to_string();
    requests.lock().expect("stub lock").push(StubRequest {
        path,
        body,
        authorization,
    });

    let (status, payload) = match response {
        StubResponse::ChatContent(content) => (
            200,
            json!({
                "id": "chatcmpl-stub",
                "object": "chat.completion",
                "model": "stub",
                "choices": [{
                    "index": 0,
                    "message": {"role": "assistant", "content": content},
                    "finish_reason": "stop"
                }]
            })
            .to_string(),
        ),
        StubResponse::Raw { status, body } => (*status, body.clone()),
    };
    let reason = if status == 200 { "OK" } else { "Error" };
    let mut stream = reader.into_inner();
    write!(
        stream,
        "HTTP/1.1 {status} {reason}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{payload}",
        payload.len()
    )?;
    stream.flush()?;
    Ok(())
}
