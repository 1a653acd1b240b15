//! Shared XML text helpers used by every wire format in the crate.

use quick_xml::events::Event;
use quick_xml::Reader;

/// Escape a string for use as XML element text.
///
/// The five XML-special characters are always escaped; carriage returns are
/// escaped numerically so values survive line-ending normalization in
/// conforming parsers.
pub(crate) fn escape_text(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            '\r' => out.push_str("&#13;"),
            _ => out.push(c),
        }
    }
    out
}

/// Escape a string for use as an XML attribute value.
///
/// Same as [`escape_text`] plus numeric escapes for tab and newline, which
/// attribute-value normalization would otherwise turn into spaces.
pub(crate) fn escape_attr(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            '\t' => out.push_str("&#9;"),
            '\n' => out.push_str("&#10;"),
            '\r' => out.push_str("&#13;"),
            _ => out.push(c),
        }
    }
    out
}

/// Check that `s` parses as a well-formed XML fragment (a sequence of text
/// and balanced elements, as would appear inside an element).
pub(crate) fn is_well_formed_fragment(s: &str) -> bool {
    let wrapped = format!("<wf-check-root>{s}</wf-check-root>");
    let mut reader = Reader::from_str(&wrapped);
    loop {
        match reader.read_event() {
            Ok(Event::Eof) => return true,
            Ok(Event::Text(t)) => {
                if t.unescape().is_err() {
                    return false;
                }
            }
            Ok(Event::Start(e)) | Ok(Event::Empty(e)) => {
                for attr in e.attributes() {
                    match attr {
                        Ok(a) => {
                            if a.unescape_value().is_err() {
                                return false;
                            }
                        }
                        Err(_) => return false,
                    }
                }
            }
            Ok(_) => {}
            Err(_) => return false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn escapes_all_five_specials() {
        assert_eq!(
            escape_text(r#"a&b<c>d"e'f"#),
            "a&amp;b&lt;c&gt;d&quot;e&apos;f"
        );
    }

    #[test]
    fn attr_escape_covers_whitespace() {
        assert_eq!(escape_attr("a\tb\nc\rd"), "a&#9;b&#10;c&#13;d");
    }

    #[test]
    fn fragment_check_accepts_text_and_elements() {
        assert!(is_well_formed_fragment(""));
        assert!(is_well_formed_fragment("plain text"));
        assert!(is_well_formed_fragment("<p>hi</p> tail <br/>"));
    }

    #[test]
    fn fragment_check_rejects_unbalanced_markup() {
        assert!(!is_well_formed_fragment("<p>unclosed"));
        assert!(!is_well_formed_fragment("</stray>"));
        assert!(!is_well_formed_fragment("a < b"));
    }
}
