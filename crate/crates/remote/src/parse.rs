use crate::RemoteError;

const LOCAL_PHRASE: &str = "execute locally";

/// Extracts the decision from a model reply.
///
/// Matching is case-insensitive and whitespace-tolerant. The earliest of
/// "Execute Locally" (action 0) or "Server <k>" (action `k`) wins; a server
/// number outside `1..=num_servers` is a range error rather than a clamp.
pub fn parse_decision(text: &str, num_servers: usize) -> Result<usize, RemoteError> {
    let normalized = text.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();

    let local_at = normalized.find(LOCAL_PHRASE);
    let server = first_server_mention(&normalized);

    let pick_server = match (local_at, &server) {
        (Some(l), Some((s, _))) => *s < l,
        (None, Some(_)) => true,
        (_, None) => false,
    };
    if pick_server {
        let (_, k) = server.expect("checked above");
        if k == 0 || k > num_servers as u64 {
            return Err(RemoteError::Range {
                action: k,
                num_servers,
            });
        }
        return Ok(k as usize);
    }
    if local_at.is_some() {
        return Ok(0);
    }
    Err(RemoteError::Parse { raw: text.to_string() })
}

/// Byte offset and number of the first "server <digits>" in lowercase text.
fn first_server_mention(text: &str) -> Option<(usize, u64)> {
    let mut from = 0;
    while let Some(rel) = text[from..].find("server") {
        let at = from + rel;
        let rest = text[at + "server".len()..].trim_start();
        let digits: String = rest.chars().take_while(|c| c.is_ascii_digit()).collect();
        if !digits.is_empty() {
            // Saturate absurdly long numbers so they surface as range errors.
            return Some((at, digits.parse().unwrap_or(u64::MAX)));
        }
        from = at + "server".len();
    }
    None
}
