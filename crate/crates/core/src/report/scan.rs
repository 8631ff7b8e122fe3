//! Byte-level JSON scanning used to pull report objects out of free text and
//! to locate a key's value inside serialized output.

use std::ops::Range;

use serde_json::Value;

use super::ReportError;

/// Byte range of the first balanced `{...}` region that parses as a JSON
/// object. Braces inside string literals are ignored.
pub fn json_block_range(text: &str) -> Option<Range<usize>> {
    let bytes = text.as_bytes();
    let mut from = 0;
    while let Some(offset) = bytes[from..].iter().position(|&b| b == b'{') {
        let start = from + offset;
        if let Some(end) = balanced_end(bytes, start) {
            if matches!(serde_json::from_str::<Value>(&text[start..end]), Ok(Value::Object(_))) {
                return Some(start..end);
            }
        }
        from = start + 1;
    }
    None
}

pub fn extract_json_block(text: &str) -> Result<&str, ReportError> {
    json_block_range(text)
        .map(|r| &text[r])
        .ok_or(ReportError::NoJsonFound)
}

/// Given `bytes[start]` is `{` or `[`, returns the index one past its
/// matching closer.
fn balanced_end(bytes: &[u8], start: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(start) {
        if in_string {
            match b {
                _ if escaped => escaped = false,
                b'\\' => escaped = true,
                b'"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' | b'[' => depth += 1,
            b'}' | b']' => {
                depth = depth.checked_sub(1)?;
                if depth == 0 {
                    return Some(i + 1);
                }
            }
            _ => {}
        }
    }
    None
}

fn string_end(bytes: &[u8], open: usize) -> Option<usize> {
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(open + 1) {
        match b {
            _ if escaped => escaped = false,
            b'\\' => escaped = true,
            b'"' => return Some(i),
            _ => {}
        }
    }
    None
}

/// Byte range of the value stored under `key` in the top-level object of
/// `json`. String values exclude their quotes; the first occurrence of a
/// duplicated key wins.
pub fn object_value_range(json: &str, key: &str) -> Option<Range<usize>> {
    let bytes = json.as_bytes();
    let skip_ws = |mut i: usize| {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        i
    };

    let mut i = skip_ws(0);
    if bytes.get(i) != Some(&b'{') {
        return None;
    }
    i += 1;
    loop {
        i = skip_ws(i);
        match bytes.get(i)? {
            b'}' => return None,
            b'"' => {}
            _ => return None,
        }
        let key_end = string_end(bytes, i)?;
        let found = &json[i + 1..key_end] == key;
        i = skip_ws(key_end + 1);
        if bytes.get(i) != Some(&b':') {
            return None;
        }
        i = skip_ws(i + 1);
        let value = match bytes.get(i)? {
            b'"' => {
                let close = string_end(bytes, i)?;
                (i + 1..close, close + 1)
            }
            b'{' | b'[' => {
                let end = balanced_end(bytes, i)?;
                (i..end, end)
            }
            _ => {
                let mut end = i;
                while end < bytes.len() && !matches!(bytes[end], b',' | b'}' | b']') && !bytes[end].is_ascii_whitespace() {
                    end += 1;
                }
                (i..end, end)
            }
        };
        if found {
            return Some(value.0);
        }
        i = skip_ws(value.1);
        match bytes.get(i)? {
            b',' => i += 1,
            _ => return None,
        }
    }
}
