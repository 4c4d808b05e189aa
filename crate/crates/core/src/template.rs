//! Plain-text templates with `{name}` placeholders.

/// Substitutes `{name}` placeholders in a single left-to-right pass.
///
/// Substituted text is never rescanned, so user input containing braces is
/// inserted verbatim. Unknown placeholders are left as written.
pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + vars.iter().map(|(_, v)| v.len()).sum::<usize>());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let value = after
            .find('}')
            .and_then(|close| {
                let name = &after[..close];
                vars.iter().find(|(k, _)| *k == name).map(|(_, v)| (close, *v))
            });
        match value {
            Some((close, v)) => {
                out.push_str(v);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}
