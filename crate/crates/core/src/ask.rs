//! Model calls whose answers must parse, with bounded re-prompting.

use crate::backends::{BackendError, Backends};
use crate::parse::ParseError;
use crate::prompts::Prompt;

/// Outcome of a call that expects a parseable answer.
#[derive(Debug, Clone, PartialEq)]
pub struct Parsed<T> {
    pub value: Result<T, ParseError>,
    /// Requests sent, including re-prompts.
    pub attempts: u32,
    /// Raw text of the final response.
    pub last_response: String,
}

/// Sends `prompt` to the chat model, re-prompting up to `retries` times
/// while `parse` rejects the answer. Backend failures are returned as the
/// outer error; parse failures as the inner one.
pub fn chat_parsed<T>(
    backends: &Backends,
    prompt: &Prompt,
    max_tokens: u32,
    seed: Option<u64>,
    retries: u32,
    parse: impl Fn(&str) -> Result<T, ParseError>,
) -> Result<Parsed<T>, BackendError> {
    let mut last = Err(ParseError::NoItems);
    let mut text = String::new();
    for attempt in 0..=retries {
        let p = prompt.with_retry(attempt);
        let mut req = backends.chat_request(&p.system, &p.user)?.max_tokens(max_tokens);
        if let Some(s) = seed {
            req = req.seed(s);
        }
        text = backends.chat_complete(&req)?;
        last = parse(&text);
        if last.is_ok() {
            return Ok(Parsed { value: last, attempts: attempt + 1, last_response: text });
        }
    }
    Ok(Parsed { value: last, attempts: retries + 1, last_response: text })
}

/// As [`chat_parsed`] for a vision request about one image.
pub fn vision_parsed<T>(
    backends: &Backends,
    source: &str,
    prompt: &Prompt,
    max_tokens: u32,
    retries: u32,
    parse: impl Fn(&str) -> Result<T, ParseError>,
) -> Result<Parsed<T>, BackendError> {
    let mut last = Err(ParseError::NoItems);
    let mut text = String::new();
    for attempt in 0..=retries {
        let p = prompt.with_retry(attempt);
        let req = backends.vision_request(source, &p.system, &p.user)?.max_tokens(max_tokens);
        text = backends.caption(&req)?;
        last = parse(&text);
        if last.is_ok() {
            return Ok(Parsed { value: last, attempts: attempt + 1, last_response: text });
        }
    }
    Ok(Parsed { value: last, attempts: retries + 1, last_response: text })
}
