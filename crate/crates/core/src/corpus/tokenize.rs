/// Lowercases `text`, splits on whitespace, separates every punctuation
/// character into its own token and splits contractions at the apostrophe
/// (`it's` becomes `it`, `'s`).
pub fn tokenize(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    let mut out = Vec::new();
    for chunk in lower.split_whitespace() {
        let chars: Vec<char> = chunk.chars().collect();
        let mut word = String::new();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            if c.is_alphanumeric() {
                word.push(c);
                i += 1;
            } else if c == '\'' && chars.get(i + 1).is_some_and(|n| n.is_alphanumeric()) {
                flush(&mut word, &mut out);
                word.push('\'');
                i += 1;
                while i < chars.len() && chars[i].is_alphanumeric() {
                    word.push(chars[i]);
                    i += 1;
                }
                flush(&mut word, &mut out);
            } else {
                flush(&mut word, &mut out);
                out.push(c.to_string());
                i += 1;
            }
        }
        flush(&mut word, &mut out);
    }
    out
}

fn flush(word: &mut String, out: &mut Vec<String>) {
    if !word.is_empty() {
        out.push(std::mem::take(word));
    }
}
