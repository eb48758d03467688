//! NDJSON request/response protocol shared by external scorers and judges.
//!
//! A server announces itself with a handshake line `{"protocol": "<name>"}`
//! and then answers every request line with one response line carrying the
//! same `id`. Responses may arrive in any order; clients match them by id.
//! Two transports are supported: the stdio of a child process and an HTTP
//! POST whose body is the request NDJSON.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufReader, Write};
use std::process::{Command, Stdio};
use std::sync::mpsc;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::scoring::{ItemError, ItemResult};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "transport", rename_all = "lowercase")]
pub enum Transport {
    Stdio { program: String, args: Vec<String> },
    Http { url: String },
}

impl Transport {
    /// Parses `stdio:<program> [args…]` or `http://…` / `https://…`.
    pub fn parse(spec: &str) -> Result<Self> {
        if let Some(cmd) = spec.strip_prefix("stdio:") {
            let mut words = cmd.split_whitespace().map(str::to_owned);
            let program = words
                .next()
                .ok_or_else(|| Error::config("stdio transport needs a command"))?;
            return Ok(Transport::Stdio {
                program,
                args: words.collect(),
            });
        }
        let url = spec.strip_prefix("http:").filter(|u| u.starts_with("//")).map(|u| format!("http:{u}"));
        let url = url.or_else(|| spec.starts_with("https://").then(|| spec.to_owned()));
        match url {
            Some(url) => Ok(Transport::Http { url }),
            None => Err(Error::config(format!("unrecognized transport `{spec}`"))),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Transport::Stdio { program, args } if args.is_empty() => format!("stdio:{program}"),
            Transport::Stdio { program, args } => format!("stdio:{program} {}", args.join(" ")),
            Transport::Http { url } => url.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProtocolClient {
    pub transport: Transport,
    pub protocol: &'static str,
    pub timeout: Duration,
}

fn handshake_ok(line: &str, protocol: &str) -> bool {
    serde_json::from_str::<Value>(line)
        .ok()
        .and_then(|v| v.get("protocol").and_then(Value::as_str).map(|p| p == protocol))
        .unwrap_or(false)
}

impl ProtocolClient {
    pub fn new(transport: Transport, protocol: &'static str) -> Self {
        ProtocolClient {
            transport,
            protocol,
            timeout: DEFAULT_TIMEOUT,
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    /// Sends every request and returns the response objects keyed by id, in
    /// the order requests were given. Items without a usable response carry
    /// an [`ItemError`]. Only transport failures (spawn, handshake, HTTP)
    /// fail the whole call.
    pub fn exchange(&self, requests: &[(String, Map<String, Value>)]) -> Result<Vec<ItemResult<Map<String, Value>>>> {
        let mut body = String::new();
        for (id, fields) in requests {
            let mut obj = Map::new();
            obj.insert("id".into(), Value::String(id.clone()));
            obj.extend(fields.clone());
            body.push_str(&serde_json::to_string(&Value::Object(obj))?);
            body.push('\n');
        }
        let (lines, timed_out) = match &self.transport {
            Transport::Stdio { program, args } => self.exchange_stdio(program, args, body, requests.len())?,
            Transport::Http { url } => (self.exchange_http(url, &body)?, false),
        };
        let ids: Vec<&str> = requests.iter().map(|(id, _)| id.as_str()).collect();
        Ok(match_responses(&ids, &lines, timed_out))
    }

    fn exchange_stdio(
        &self,
        program: &str,
        args: &[String],
        body: String,
        expected: usize,
    ) -> Result<(Vec<String>, bool)> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::transport(format!("cannot start `{program}`: {e}")))?;
        let stdout = child.stdout.take().expect("piped stdout");
        let mut stdin = child.stdin.take().expect("piped stdin");

        let (tx, rx) = mpsc::channel::<std::io::Result<String>>();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });

        let result = (|| {
            let handshake = match rx.recv_timeout(self.timeout) {
                Ok(Ok(line)) => line,
                Ok(Err(e)) => return Err(Error::transport(format!("reading from `{program}`: {e}"))),
                Err(_) => return Err(Error::transport(format!("`{program}` sent no handshake"))),
            };
            if !handshake_ok(&handshake, self.protocol) {
                return Err(Error::transport(format!(
                    "`{program}` handshake {handshake:?} does not announce {}",
                    self.protocol
                )));
            }
            let writer = thread::spawn(move || {
                let res = stdin.write_all(body.as_bytes()).and_then(|_| stdin.flush());
                drop(stdin);
                res
            });
            let mut lines = Vec::with_capacity(expected);
            let mut timed_out = false;
            while lines.len() < expected {
                match rx.recv_timeout(self.timeout) {
                    Ok(Ok(line)) if line.trim().is_empty() => {}
                    Ok(Ok(line)) => lines.push(line),
                    Ok(Err(e)) => return Err(Error::transport(format!("reading from `{program}`: {e}"))),
                    Err(mpsc::RecvTimeoutError::Timeout) => {
                        timed_out = true;
                        break;
                    }
                    Err(mpsc::RecvTimeoutError::Disconnected) => break,
                }
            }
            Ok((lines, timed_out, writer))
        })();
        // the writer may be blocked on a stalled server; killing unblocks it
        let _ = child.kill();
        let _ = child.wait();
        let (lines, timed_out, writer) = result?;
        if let Ok(Err(e)) = writer.join() {
            if e.kind() != std::io::ErrorKind::BrokenPipe && lines.len() < expected && !timed_out {
                return Err(Error::transport(format!("writing to `{program}`: {e}")));
            }
        }
        Ok((lines, timed_out))
    }

    fn exchange_http(&self, url: &str, body: &str) -> Result<Vec<String>> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(self.timeout))
            .build()
            .into();
        let mut response = agent
            .post(url)
            .header("Content-Type", "application/x-ndjson")
            .send(body)
            .map_err(|e| Error::transport(format!("POST {url}: {e}")))?;
        let text = response
            .body_mut()
            .with_config()
            .limit(1 << 30)
            .read_to_string()
            .map_err(|e| Error::transport(format!("reading response from {url}: {e}")))?;
        let mut lines: Vec<String> = text.lines().filter(|l| !l.trim().is_empty()).map(str::to_owned).collect();
        // the handshake line is optional over HTTP, but must match if present
        if let Some(first) = lines.first() {
            if serde_json::from_str::<Value>(first).ok().and_then(|v| v.get("protocol").cloned()).is_some() {
                if !handshake_ok(first, self.protocol) {
                    return Err(Error::transport(format!("{url} does not speak {}", self.protocol)));
                }
                lines.remove(0);
            }
        }
        Ok(lines)
    }
}

/// Pairs raw response lines with request ids.
pub fn match_responses(ids: &[&str], lines: &[String], timed_out: bool) -> Vec<ItemResult<Map<String, Value>>> {
    let mut by_id: HashMap<String, Vec<Map<String, Value>>> = HashMap::new();
    let mut malformed = 0usize;
    let mut unknown: Vec<String> = Vec::new();
    let wanted: std::collections::HashSet<&str> = ids.iter().copied().collect();
    for line in lines {
        match serde_json::from_str::<Value>(line) {
            Ok(Value::Object(obj)) => match obj.get("id").and_then(Value::as_str) {
                Some(id) if wanted.contains(id) => by_id.entry(id.to_owned()).or_default().push(obj),
                Some(id) => unknown.push(id.to_owned()),
                None => malformed += 1,
            },
            _ => malformed += 1,
        }
    }
    ids.iter()
        .map(|&id| {
            let err = |message: String| ItemError {
                id: id.to_owned(),
                message,
            };
            match by_id.remove(id) {
                Some(mut objs) if objs.len() == 1 => Ok(objs.remove(0)),
                Some(objs) => Err(err(format!("{} responses for one request", objs.len()))),
                None => {
                    let mut msg = if timed_out {
                        "timed out waiting for a response".to_owned()
                    } else {
                        "no response".to_owned()
                    };
                    if !unknown.is_empty() {
                        msg.push_str(&format!("; id mismatch, server answered unknown ids {unknown:?}"));
                    }
                    if malformed > 0 {
                        msg.push_str(&format!("; {malformed} malformed response line(s)"));
                    }
                    Err(err(msg))
                }
            }
        })
        .collect()
}

/// Runs a protocol server over a line reader and writer.
///
/// Writes the handshake, then one response per non-empty request line.
/// Lines that are not JSON objects with a string `id` get an error
/// response with id `unknown`. With `reverse`, all requests are read before
/// any response and responses go out in reverse order; this exercises
/// client-side id matching.
pub fn serve<R, W, F>(protocol: &str, input: R, mut output: W, reverse: bool, mut handler: F) -> Result<()>
where
    R: BufRead,
    W: Write,
    F: FnMut(&Map<String, Value>) -> std::result::Result<Map<String, Value>, String>,
{
    let io_err = |e| Error::io("<protocol stream>", e);
    let mut handshake = Map::new();
    handshake.insert("protocol".into(), Value::String(protocol.to_owned()));
    writeln!(output, "{}", Value::Object(handshake)).map_err(io_err)?;
    output.flush().map_err(io_err)?;

    let mut pending = Vec::new();
    for line in input.lines() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let response = respond(&line, &mut handler);
        if reverse {
            pending.push(response);
        } else {
            writeln!(output, "{response}").map_err(io_err)?;
            output.flush().map_err(io_err)?;
        }
    }
    for response in pending.into_iter().rev() {
        writeln!(output, "{response}").map_err(io_err)?;
    }
    output.flush().map_err(io_err)
}

fn respond<F>(line: &str, handler: &mut F) -> Value
where
    F: FnMut(&Map<String, Value>) -> std::result::Result<Map<String, Value>, String>,
{
    let error = |id: &str, msg: String| {
        let mut m = BTreeMap::new();
        m.insert("id", Value::String(id.to_owned()));
        m.insert("error", Value::String(msg));
        serde_json::to_value(m).unwrap_or(Value::Null)
    };
    let obj = match serde_json::from_str::<Value>(line) {
        Ok(Value::Object(obj)) => obj,
        _ => return error("unknown", "malformed request line".into()),
    };
    let Some(id) = obj.get("id").and_then(Value::as_str).map(str::to_owned) else {
        return error("unknown", "request has no string id".into());
    };
    match handler(&obj) {
        Ok(fields) => {
            let mut out = Map::new();
            out.insert("id".into(), Value::String(id));
            out.extend(fields);
            Value::Object(out)
        }
        Err(msg) => error(&id, msg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transport_specs() {
        assert_eq!(
            Transport::parse("stdio:python3 -m scorer --fast").unwrap(),
            Transport::Stdio {
                program: "python3".into(),
                args: vec!["-m".into(), "scorer".into(), "--fast".into()]
            }
        );
        assert_eq!(
            Transport::parse("http://localhost:8080/score").unwrap(),
            Transport::Http {
                url: "http://localhost:8080/score".into()
            }
        );
        assert!(Transport::parse("ftp://x").is_err());
        assert!(Transport::parse("stdio:").is_err());
    }

    #[test]
    fn responses_match_by_id_in_any_order() {
        let lines = vec![r#"{"id":"b","v":2}"#.to_owned(), r#"{"id":"a","v":1}"#.to_owned()];
        let got = match_responses(&["a", "b"], &lines, false);
        assert_eq!(got[0].as_ref().unwrap()["v"], 1);
        assert_eq!(got[1].as_ref().unwrap()["v"], 2);
    }

    #[test]
    fn missing_and_mismatched_ids_are_item_errors() {
        let lines = vec![r#"{"id":"zzz","v":2}"#.to_owned(), "not json".to_owned(), r#"{"id":"a","v":1}"#.to_owned()];
        let got = match_responses(&["a", "b"], &lines, false);
        assert!(got[0].is_ok());
        let err = got[1].as_ref().unwrap_err();
        assert_eq!(err.id, "b");
        assert!(err.message.contains("id mismatch") && err.message.contains("malformed"), "{}", err.message);
    }

    #[test]
    fn duplicate_responses_are_item_errors() {
        let lines = vec![r#"{"id":"a"}"#.to_owned(), r#"{"id":"a"}"#.to_owned()];
        assert!(match_responses(&["a"], &lines, false)[0].is_err());
    }

    #[test]
    fn server_emits_handshake_and_reverses() {
        let input = "{\"id\":\"1\"}\n\n{\"id\":\"2\"}\nnonsense\n";
        let mut out = Vec::new();
        serve("scorer/1", input.as_bytes(), &mut out, true, |req| {
            let mut m = Map::new();
            m.insert("echo".into(), req["id"].clone());
            Ok(m)
        })
        .unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], r#"{"protocol":"scorer/1"}"#);
        assert_eq!(lines[1], r#"{"error":"malformed request line","id":"unknown"}"#);
        assert_eq!(lines[2], r#"{"echo":"2","id":"2"}"#);
        assert_eq!(lines[3], r#"{"echo":"1","id":"1"}"#);
    }
}
