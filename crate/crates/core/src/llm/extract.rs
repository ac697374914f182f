use crate::error::{Error, Result};

/// All innermost `open ... close` spans in order of appearance.
pub fn extract_delimited(text: &str, open: &str, close: &str) -> Result<Vec<String>> {
    if open.is_empty() || close.is_empty() || open == close {
        return Err(Error::InvalidArgument("tags must be nonempty and distinct".into()));
    }
    // (offset of the opening tag, whether a nested span closed inside it)
    let mut stack: Vec<(usize, bool)> = Vec::new();
    let mut out = Vec::new();
    let mut i = 0;
    while i < text.len() {
        let rest = &text[i..];
        if rest.starts_with(open) {
            stack.push((i, false));
            i += open.len();
        } else if rest.starts_with(close) {
            let (start, nested) = stack.pop().ok_or(Error::Extract { offset: i })?;
            if !nested {
                out.push(text[start + open.len()..i].to_string());
            }
            if let Some(parent) = stack.last_mut() {
                parent.1 = true;
            }
            i += close.len();
        } else {
            i += rest.chars().next().map_or(1, char::len_utf8);
        }
    }
    match stack.first() {
        Some(&(offset, _)) => Err(Error::Extract { offset }),
        None => Ok(out),
    }
}
