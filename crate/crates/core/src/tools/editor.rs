//! Pure text operations behind `str_replace_editor`.

/// Lines shown around an edit in the confirmation snippet.
pub const SNIPPET_CONTEXT: usize = 4;

/// `cat -n` rendering of `text`, numbering from `first_line`.
pub fn number_lines(text: &str, first_line: usize) -> String {
    let mut out = String::new();
    for (i, line) in text.split('\n').enumerate() {
        out.push_str(&format!("{:6}\t{}\n", first_line + i, line));
    }
    out
}

/// Lines of `text` as `cat -n` would count them; a trailing newline does not start a new line.
pub fn lines(text: &str) -> Vec<&str> {
    if text.is_empty() {
        return Vec::new();
    }
    text.strip_suffix('\n').unwrap_or(text).split('\n').collect()
}

/// Numbered view of a file, optionally restricted to an inclusive 1-based range.
/// An end of `-1` means "to the last line".
pub fn view_file(text: &str, range: Option<(i64, i64)>) -> Result<String, String> {
    let all = lines(text);
    let count = all.len() as i64;
    let (start, end) = match range {
        None => (1, count),
        Some((start, end)) => {
            if start < 1 || start > count.max(1) {
                return Err(format!(
                    "Invalid `view_range`: [{start}, {end}]. Its first element `{start}` should be within the range of lines of the file: [1, {count}]"
                ));
            }
            let end = if end == -1 { count } else { end };
            if end < start {
                return Err(format!(
                    "Invalid `view_range`: [{start}, {end}]. Its second element `{end}` should be larger or equal than its first `{start}`"
                ));
            }
            if end > count {
                return Err(format!(
                    "Invalid `view_range`: [{start}, {end}]. Its second element `{end}` should be smaller than the number of lines in the file: `{count}`"
                ));
            }
            (start, end)
        }
    };
    if count == 0 {
        return Ok(String::new());
    }
    let selected = all[(start - 1) as usize..end as usize].join("\n");
    Ok(number_lines(&selected, start as usize))
}

/// Byte offsets of every occurrence of `needle`, overlapping ones included.
pub fn occurrences(haystack: &[u8], needle: &[u8]) -> Vec<usize> {
    if needle.is_empty() || needle.len() > haystack.len() {
        return Vec::new();
    }
    haystack
        .windows(needle.len())
        .enumerate()
        .filter(|(_, w)| *w == needle)
        .map(|(i, _)| i)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReplaceError {
    EmptyOld,
    NotFound,
    NotUnique(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Replaced {
    pub text: Vec<u8>,
    /// Byte offset where the new text starts.
    pub at: usize,
}

/// Replaces the single occurrence of `old` with `new`. Byte-literal, no normalization.
pub fn replace_unique(text: &[u8], old: &[u8], new: &[u8]) -> Result<Replaced, ReplaceError> {
    if old.is_empty() {
        return Err(ReplaceError::EmptyOld);
    }
    let hits = occurrences(text, old);
    match hits.as_slice() {
        [] => Err(ReplaceError::NotFound),
        [at] => {
            let mut out = Vec::with_capacity(text.len() - old.len() + new.len());
            out.extend_from_slice(&text[..*at]);
            out.extend_from_slice(new);
            out.extend_from_slice(&text[at + old.len()..]);
            Ok(Replaced { text: out, at: *at })
        }
        _ => Err(ReplaceError::NotUnique(
            hits.iter().map(|&at| line_of(text, at)).collect(),
        )),
    }
}

/// 1-based line number containing byte `offset`.
pub fn line_of(text: &[u8], offset: usize) -> usize {
    text[..offset.min(text.len())].iter().filter(|b| **b == b'\n').count() + 1
}

/// Inserts `new` after line `after` (0 prepends). `None` when `after` is past the last line.
pub fn insert_after(text: &str, after: usize, new: &str) -> Option<String> {
    let pieces: Vec<&str> = text.split_inclusive('\n').collect();
    if after > pieces.len() {
        return None;
    }
    if after == pieces.len() {
        let mut out = text.to_string();
        if !out.is_empty() && !out.ends_with('\n') {
            out.push('\n');
        }
        out.push_str(new);
        if new.is_empty() || (text.ends_with('\n') && !new.ends_with('\n')) {
            out.push('\n');
        }
        return Some(out);
    }
    let mut out = pieces[..after].concat();
    out.push_str(new);
    if !new.ends_with('\n') {
        out.push('\n');
    }
    out.push_str(&pieces[after..].concat());
    Some(out)
}

/// Numbered excerpt of `text` around lines `first..=last`.
pub fn snippet(text: &str, first: usize, last: usize) -> String {
    let all = lines(text);
    if all.is_empty() {
        return String::new();
    }
    let start = first.saturating_sub(SNIPPET_CONTEXT).max(1);
    let end = (last + SNIPPET_CONTEXT).min(all.len()).max(start);
    number_lines(&all[start - 1..end].join("\n"), start)
}
