//! Chat-completions wire protocol: UTF-8 JSON over HTTPS with per-token
//! probability reporting via the `logprobs` / `top_logprobs` convention.

use std::time::Duration;

use serde_json::{json, Value};

use super::{
    ChatExchange, Completion, GatewayError, ImageRef, ImageSource, ModelEndpoint, Role,
    TokenDistribution, TokenProb,
};

pub(crate) fn call_http(
    endpoint: &ModelEndpoint,
    exchange: &ChatExchange,
) -> Result<Completion, GatewayError> {
    let body = build_request(endpoint, exchange)?;
    let url = completions_url(&endpoint.base_url);
    let api_key = resolve_api_key(endpoint)?;
    let client = reqwest::blocking::Client::new();

    let mut last_error = String::new();
    for attempt in 1..=endpoint.retry_policy.max_attempts {
        if attempt > 1 {
            let backoff = endpoint.retry_policy.backoff_base_ms << (attempt - 2).min(16);
            std::thread::sleep(Duration::from_millis(backoff));
        }
        let mut request = client
            .post(&url)
            .timeout(Duration::from_secs(endpoint.timeout_secs))
            .json(&body);
        if let Some(key) = &api_key {
            request = request.bearer_auth(key);
        }
        match request.send() {
            Ok(response) => {
                let status = response.status();
                if status.is_success() {
                    let value: Value = response
                        .json()
                        .map_err(|e| GatewayError::Protocol(format!("invalid json: {e}")))?;
                    return parse_response(&value);
                }
                // 429 and 5xx are transient; other statuses are terminal.
                if status.as_u16() == 429 || status.is_server_error() {
                    last_error = format!("http status {status}");
                    continue;
                }
                let text = response.text().unwrap_or_default();
                return Err(GatewayError::Protocol(format!(
                    "http status {status}: {}",
                    text.chars().take(200).collect::<String>()
                )));
            }
            Err(e) => {
                last_error = e.to_string();
                continue;
            }
        }
    }
    Err(GatewayError::RetryExhausted {
        attempts: endpoint.retry_policy.max_attempts,
        last_error,
    })
}

fn resolve_api_key(endpoint: &ModelEndpoint) -> Result<Option<String>, GatewayError> {
    if endpoint.api_key_ref.is_empty() {
        return Ok(None);
    }
    match std::env::var(&endpoint.api_key_ref) {
        Ok(key) => Ok(Some(key)),
        Err(_) => Err(GatewayError::MissingApiKey {
            var: endpoint.api_key_ref.clone(),
        }),
    }
}

fn completions_url(base_url: &str) -> String {
    let trimmed = base_url.trim_end_matches('/');
    if trimmed.ends_with("/chat/completions") {
        trimmed.to_string()
    } else {
        format!("{trimmed}/chat/completions")
    }
}

pub(crate) fn build_request(
    endpoint: &ModelEndpoint,
    exchange: &ChatExchange,
) -> Result<Value, GatewayError> {
    let mut messages = Vec::with_capacity(exchange.messages.len());
    for message in &exchange.messages {
        let role = match message.role {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        };
        let content = match &message.image {
            None => json!(message.text),
            Some(image) => json!([
                { "type": "text", "text": message.text },
                { "type": "image_url", "image_url": { "url": image_to_wire(image)? } },
            ]),
        };
        messages.push(json!({ "role": role, "content": content }));
    }
    let mut body = json!({
        "model": endpoint.model_name,
        "messages": messages,
        "temperature": exchange.sampling.temperature,
        "top_p": exchange.sampling.top_p,
        "max_tokens": exchange.sampling.max_tokens,
    });
    if let Some(seed) = exchange.sampling.seed {
        body["seed"] = json!(seed);
    }
    if exchange.want_token_probs {
        body["logprobs"] = json!(true);
        body["top_logprobs"] = json!(exchange.top_k_probs);
    }
    Ok(body)
}

/// Local files are inlined as base64 data URIs; URLs pass through.
fn image_to_wire(image: &ImageRef) -> Result<String, GatewayError> {
    use base64::Engine as _;
    let engine = base64::engine::general_purpose::STANDARD;
    match image.source {
        ImageSource::Url => Ok(image.value.clone()),
        ImageSource::InlineBase64 => {
            let bytes = engine
                .decode(&image.value)
                .map_err(|e| GatewayError::Protocol(format!("bad inline image: {e}")))?;
            Ok(format!(
                "data:{};base64,{}",
                sniff_mime(&bytes),
                image.value
            ))
        }
        ImageSource::FilePath => {
            let bytes = std::fs::read(&image.value)?;
            Ok(format!(
                "data:{};base64,{}",
                sniff_mime(&bytes),
                engine.encode(&bytes)
            ))
        }
    }
}

fn sniff_mime(bytes: &[u8]) -> &'static str {
    if bytes.starts_with(b"\x89PNG") {
        "image/png"
    } else if bytes.starts_with(b"\xff\xd8") {
        "image/jpeg"
    } else if bytes.starts_with(b"GIF8") {
        "image/gif"
    } else if bytes.len() >= 12 && &bytes[0..4] == b"RIFF" && &bytes[8..12] == b"WEBP" {
        "image/webp"
    } else {
        "application/octet-stream"
    }
}

pub(crate) fn parse_response(value: &Value) -> Result<Completion, GatewayError> {
    let choice = value
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| GatewayError::Protocol("response has no choices".into()))?;
    let text = choice
        .pointer("/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| GatewayError::Protocol("choice has no message content".into()))?
        .to_string();

    let mut distributions = Vec::new();
    if let Some(items) = choice
        .pointer("/logprobs/content")
        .and_then(Value::as_array)
    {
        for (position, item) in items.iter().enumerate() {
            let mut entries = Vec::new();
            if let Some(top) = item.get("top_logprobs").and_then(Value::as_array) {
                for candidate in top {
                    entries.extend(parse_logprob_entry(candidate));
                }
            }
            if entries.is_empty() {
                entries.extend(parse_logprob_entry(item));
            }
            if entries.is_empty() {
                return Err(GatewayError::Protocol(format!(
                    "logprob item at position {position} has no token entries"
                )));
            }
            distributions.push(TokenDistribution::new(position, entries));
        }
    }
    let completion = Completion {
        text,
        distributions,
    };
    completion.validate()?;
    Ok(completion)
}

fn parse_logprob_entry(item: &Value) -> Option<TokenProb> {
    let token_text = item.get("token")?.as_str()?.to_string();
    let logprob = item.get("logprob")?.as_f64()?;
    Some(TokenProb {
        token_text,
        probability: logprob.exp().min(1.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{RetryPolicy, Sampling};

    fn endpoint() -> ModelEndpoint {
        ModelEndpoint {
            id: "vision".into(),
            base_url: "https://api.example.com/v1".into(),
            model_name: "vision-model".into(),
            api_key_ref: String::new(),
            kind: crate::gateway::EndpointKind::Vision,
            max_in_flight: 4,
            timeout_secs: 30,
            retry_policy: RetryPolicy::default(),
        }
    }

    #[test]
    fn url_normalization_appends_path_once() {
        assert_eq!(
            completions_url("https://api.example.com/v1"),
            "https://api.example.com/v1/chat/completions"
        );
        assert_eq!(
            completions_url("https://api.example.com/v1/chat/completions"),
            "https://api.example.com/v1/chat/completions"
        );
    }

    #[test]
    fn request_carries_logprob_fields_only_when_asked() {
        let mut exchange = ChatExchange::user("hello");
        let body = build_request(&endpoint(), &exchange).unwrap();
        assert!(body.get("logprobs").is_none());

        exchange.want_token_probs = true;
        exchange.top_k_probs = 20;
        let body = build_request(&endpoint(), &exchange).unwrap();
        assert_eq!(body["logprobs"], serde_json::json!(true));
        assert_eq!(body["top_logprobs"], serde_json::json!(20));
    }

    #[test]
    fn request_includes_seed_and_sampling() {
        let mut exchange = ChatExchange::user("hi");
        exchange.sampling = Sampling {
            temperature: 1.0,
            top_p: 0.9,
            max_tokens: 64,
            seed: Some(7),
        };
        let body = build_request(&endpoint(), &exchange).unwrap();
        assert_eq!(body["seed"], serde_json::json!(7));
        assert_eq!(body["temperature"], serde_json::json!(1.0));
    }

    #[test]
    fn parses_text_and_sorted_top_logprobs() {
        let raw = serde_json::json!({
            "choices": [{
                "message": { "role": "assistant", "content": "True" },
                "logprobs": { "content": [{
                    "token": "True",
                    "logprob": -0.105360515657826,
                    "top_logprobs": [
                        { "token": "False", "logprob": -2.99573227355399 },
                        { "token": "True", "logprob": -0.105360515657826 }
                    ]
                }]}
            }]
        });
        let completion = parse_response(&raw).unwrap();
        assert_eq!(completion.text, "True");
        let entries = &completion.distributions[0].entries;
        assert_eq!(entries[0].token_text, "True");
        assert!((entries[0].probability - 0.9).abs() < 1e-9);
        assert!(entries[0].probability >= entries[1].probability);
    }

    #[test]
    fn malformed_response_is_a_protocol_error() {
        let missing_choices = serde_json::json!({ "id": "x" });
        assert!(matches!(
            parse_response(&missing_choices),
            Err(GatewayError::Protocol(_))
        ));
        let missing_content = serde_json::json!({ "choices": [{ "message": {} }] });
        assert!(matches!(
            parse_response(&missing_content),
            Err(GatewayError::Protocol(_))
        ));
    }
}
