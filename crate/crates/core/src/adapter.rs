//! Device-aware content adaptation.
//!
//! The adapter sits between the canonical store and the client: it resolves
//! the requesting device class, selects content blocks within that device's
//! payload budget, and renders the result as an HTML page or as the raw
//! store XML restricted to the selection.
//!
//! Selection is a deterministic greedy prefix over (priority, document
//! order): essential blocks are always kept, remaining blocks are added in
//! priority order until the next one would overflow the budget. Enlarging
//! the budget therefore never drops a previously selected block.

use crate::content_store::{item_to_xml, roster_to_xml, ContentItem, ForumRoster};
use crate::xml::escape_text;

/// Client device class resolved for a request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DeviceClass {
    Mobile,
    Desktop,
}

impl DeviceClass {
    pub fn as_str(self) -> &'static str {
        match self {
            DeviceClass::Mobile => "mobile",
            DeviceClass::Desktop => "desktop",
        }
    }

    pub fn from_str(s: &str) -> Option<DeviceClass> {
        match s {
            "mobile" => Some(DeviceClass::Mobile),
            "desktop" => Some(DeviceClass::Desktop),
            _ => None,
        }
    }
}

impl std::fmt::Display for DeviceClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Capability record driving adaptation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeviceProfile {
    pub class: DeviceClass,
    /// `None` means unlimited (desktop); mobile profiles are always finite.
    pub max_payload_bytes: Option<u64>,
    pub supports_media: bool,
    pub screen_width_px: u32,
}

impl DeviceProfile {
    pub fn mobile_default() -> DeviceProfile {
        DeviceProfile {
            class: DeviceClass::Mobile,
            max_payload_bytes: Some(16_384),
            supports_media: false,
            screen_width_px: 360,
        }
    }

    pub fn desktop_default() -> DeviceProfile {
        DeviceProfile {
            class: DeviceClass::Desktop,
            max_payload_bytes: None,
            supports_media: true,
            screen_width_px: 1280,
        }
    }
}

/// The configured profile per device class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeviceProfiles {
    pub mobile: DeviceProfile,
    pub desktop: DeviceProfile,
}

impl Default for DeviceProfiles {
    fn default() -> Self {
        DeviceProfiles {
            mobile: DeviceProfile::mobile_default(),
            desktop: DeviceProfile::desktop_default(),
        }
    }
}

impl DeviceProfiles {
    pub fn for_class(&self, class: DeviceClass) -> &DeviceProfile {
        match class {
            DeviceClass::Mobile => &self.mobile,
            DeviceClass::Desktop => &self.desktop,
        }
    }
}

/// Case-insensitive user-agent substrings that mark a mobile client.
pub const DEFAULT_MOBILE_MARKERS: [&str; 6] = [
    "mobile",
    "android",
    "iphone",
    "ipad",
    "opera mini",
    "windows phone",
];

pub fn default_mobile_markers() -> Vec<String> {
    DEFAULT_MOBILE_MARKERS.iter().map(|s| s.to_string()).collect()
}

/// Resolve the device class for a request.
///
/// Resolution order: explicit override, then user-agent marker match, then
/// desktop. Always succeeds.
pub fn detect_device<'a>(
    override_class: Option<DeviceClass>,
    user_agent: Option<&str>,
    markers: &[String],
    profiles: &'a DeviceProfiles,
) -> &'a DeviceProfile {
    if let Some(class) = override_class {
        return profiles.for_class(class);
    }
    if let Some(ua) = user_agent {
        let ua = ua.to_lowercase();
        if markers.iter().any(|m| ua.contains(&m.to_lowercase())) {
            return profiles.for_class(DeviceClass::Mobile);
        }
    }
    profiles.for_class(DeviceClass::Desktop)
}

/// One block chosen by [`select_blocks`], in document order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectedBlock {
    /// Index into the item's block list.
    pub index: usize,
    /// The original block (unmodified; XML rendering uses this).
    pub block: crate::content_store::ContentBlock,
    /// True when the device lacks media support and this media/interactive
    /// block is presented as a placeholder link.
    pub placeholder: bool,
}

impl SelectedBlock {
    /// The HTML fragment this block contributes to the rendered page.
    pub fn fragment(&self) -> String {
        if self.placeholder {
            self.block.placeholder_fragment()
        } else {
            self.block.html_fragment()
        }
    }

    /// The size charged against the payload budget.
    pub fn accounted_size(&self) -> u64 {
        if self.placeholder {
            self.block.placeholder_fragment().len() as u64
        } else {
            self.block.size_bytes
        }
    }
}

/// Result of budgeted block selection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Selection {
    pub blocks: Vec<SelectedBlock>,
    pub truncated: bool,
}

impl Selection {
    pub fn accounted_total(&self) -> u64 {
        self.blocks.iter().map(|b| b.accounted_size()).sum()
    }
}

/// Select the blocks of `item` that fit `profile`.
///
/// Media and interactive blocks become placeholder links on devices without
/// media support, charged at placeholder size. Essential blocks are always
/// included; if they alone overflow the budget the selection is exactly the
/// essentials with `truncated = true`. Output preserves document order.
pub fn select_blocks(item: &ContentItem, profile: &DeviceProfile) -> Selection {
    let candidates: Vec<SelectedBlock> = item
        .blocks
        .iter()
        .enumerate()
        .map(|(index, block)| SelectedBlock {
            index,
            block: block.clone(),
            placeholder: !profile.supports_media
                && block.kind != crate::content_store::BlockKind::Text,
        })
        .collect();

    let budget = match profile.max_payload_bytes {
        None => {
            return Selection {
                blocks: candidates,
                truncated: false,
            }
        }
        Some(b) => b,
    };

    let essential_total: u64 = candidates
        .iter()
        .filter(|c| c.block.essential)
        .map(|c| c.accounted_size())
        .sum();

    if essential_total > budget {
        let blocks: Vec<SelectedBlock> = candidates
            .into_iter()
            .filter(|c| c.block.essential)
            .collect();
        return Selection {
            blocks,
            truncated: true,
        };
    }

    // Non-essential blocks join in (priority, document order) order until
    // the next one would overflow the budget.
    let mut order: Vec<usize> = (0..candidates.len())
        .filter(|&i| !candidates[i].block.essential)
        .collect();
    order.sort_by_key(|&i| (candidates[i].block.priority, i));

    let mut taken = vec![false; candidates.len()];
    for c in &candidates {
        if c.block.essential {
            taken[c.index] = true;
        }
    }
    let mut cumulative = essential_total;
    for &i in &order {
        let size = candidates[i].accounted_size();
        if cumulative + size > budget {
            break;
        }
        cumulative += size;
        taken[i] = true;
    }

    let truncated = taken.iter().any(|t| !t);
    let blocks: Vec<SelectedBlock> = candidates
        .into_iter()
        .filter(|c| taken[c.index])
        .collect();
    Selection { blocks, truncated }
}

/// The adapted response body.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedContent {
    pub content_type: String,
    pub body: String,
    pub truncated: bool,
    pub byte_size: u64,
}

impl RenderedContent {
    fn new(content_type: &str, body: String, truncated: bool) -> RenderedContent {
        let byte_size = body.len() as u64;
        RenderedContent {
            content_type: content_type.to_string(),
            body,
            truncated,
            byte_size,
        }
    }
}

/// What the adapter is asked to render.
#[derive(Debug, Clone, Copy)]
pub enum Content<'a> {
    Item(&'a ContentItem),
    Roster(&'a ForumRoster),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RenderFormat {
    Html,
    Xml,
}

impl RenderFormat {
    pub fn from_str(s: &str) -> Option<RenderFormat> {
        match s {
            "html" => Some(RenderFormat::Html),
            "xml" => Some(RenderFormat::Xml),
            _ => None,
        }
    }
}

const MOBILE_VIEWPORT: &str =
    "<head><meta name=\"viewport\" content=\"width=device-width, initial-scale=1\"/></head>";

fn shell_open(profile: &DeviceProfile) -> String {
    match profile.class {
        DeviceClass::Mobile => format!("<html>{MOBILE_VIEWPORT}<body>"),
        DeviceClass::Desktop => "<html><body>".to_string(),
    }
}

fn item_html(item: &ContentItem, selection: &Selection, profile: &DeviceProfile) -> String {
    let mut out = shell_open(profile);
    out.push_str(&format!("<h1>{}</h1>", escape_text(&item.title)));
    for block in &selection.blocks {
        out.push_str(&block.fragment());
    }
    out.push_str("</body></html>");
    out
}

fn roster_html(roster: &ForumRoster, profile: &DeviceProfile) -> String {
    let mut out = shell_open(profile);
    out.push_str(&format!("<h1>{} forum</h1>", escape_text(&roster.course)));
    out.push_str("<table border='1'>");
    for entry in &roster.entries {
        out.push_str(&format!(
            "<tr><td>{}</td><td>{}</td></tr>",
            escape_text(&entry.matric_no),
            escape_text(&entry.name)
        ));
    }
    out.push_str("</table></body></html>");
    out
}

/// Render the selected content as an HTML page.
///
/// Rosters render as a bordered two-column table (matric number, name) in
/// roster order under an `<h1>` title; items render their title and each
/// selected block fragment. Mobile profiles get a viewport meta element.
/// For `Content::Item`, `selection` of `None` means "all blocks, no
/// placeholders" (the roster case ignores it).
pub fn render_html(
    content: Content<'_>,
    selection: Option<&Selection>,
    profile: &DeviceProfile,
) -> RenderedContent {
    match content {
        Content::Item(item) => {
            let full;
            let sel = match selection {
                Some(s) => s,
                None => {
                    full = full_selection(item);
                    &full
                }
            };
            RenderedContent::new("text/html", item_html(item, sel, profile), sel.truncated)
        }
        Content::Roster(roster) => {
            RenderedContent::new("text/html", roster_html(roster, profile), false)
        }
    }
}

/// Render the selected content as the store's XML representation restricted
/// to the selected blocks (rosters pass through whole).
pub fn render_xml(content: Content<'_>, selection: Option<&Selection>) -> RenderedContent {
    match content {
        Content::Item(item) => {
            let full;
            let sel = match selection {
                Some(s) => s,
                None => {
                    full = full_selection(item);
                    &full
                }
            };
            let restricted = ContentItem {
                course: item.course.clone(),
                id: item.id.clone(),
                title: item.title.clone(),
                blocks: sel.blocks.iter().map(|b| b.block.clone()).collect(),
            };
            RenderedContent::new("application/xml", item_to_xml(&restricted), sel.truncated)
        }
        Content::Roster(roster) => {
            RenderedContent::new("application/xml", roster_to_xml(roster), false)
        }
    }
}

fn full_selection(item: &ContentItem) -> Selection {
    Selection {
        blocks: item
            .blocks
            .iter()
            .enumerate()
            .map(|(index, block)| SelectedBlock {
                index,
                block: block.clone(),
                placeholder: false,
            })
            .collect(),
        truncated: false,
    }
}

/// Select within the profile's budget, then render in the requested format.
pub fn adapt(content: Content<'_>, profile: &DeviceProfile, format: RenderFormat) -> RenderedContent {
    match content {
        Content::Item(item) => {
            let selection = select_blocks(item, profile);
            match format {
                RenderFormat::Html => render_html(content, Some(&selection), profile),
                RenderFormat::Xml => render_xml(content, Some(&selection)),
            }
        }
        Content::Roster(_) => match format {
            RenderFormat::Html => render_html(content, None, profile),
            RenderFormat::Xml => render_xml(content, None),
        },
    }
}

/// Byte size of the fixed HTML wrapper around an item's block fragments for
/// this profile: everything except the fragments themselves.
pub fn shell_overhead(item: &ContentItem, profile: &DeviceProfile) -> u64 {
    let empty = Selection {
        blocks: vec![],
        truncated: false,
    };
    item_html(item, &empty, profile).len() as u64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::content_store::{BlockKind, ContentBlock};

    fn block(kind: BlockKind, priority: u8, essential: bool, body: &str) -> ContentBlock {
        let mut b = ContentBlock {
            kind,
            priority,
            essential,
            size_bytes: 0,
            body: body.to_string(),
        };
        b.size_bytes = b.rendered_size();
        b
    }

    fn item(blocks: Vec<ContentBlock>) -> ContentItem {
        ContentItem {
            course: "DCS 202".into(),
            id: "intro".into(),
            title: "Introduction".into(),
            blocks,
        }
    }

    fn sized_text_block(priority: u8, essential: bool, target_size: u64) -> ContentBlock {
        // Fragment overhead is fixed; pad the body to hit the target size.
        let overhead = block(BlockKind::Text, priority, essential, "").size_bytes;
        assert!(target_size >= overhead, "target too small");
        let body = "x".repeat((target_size - overhead) as usize);
        block(BlockKind::Text, priority, essential, &body)
    }

    fn roster() -> ForumRoster {
        ForumRoster {
            course: "DCS 202".into(),
            entries: vec![
                RosterEntryArgs("U19CS001", "Amina Bello"),
                RosterEntryArgs("U19CS002", "Chidi Okafor"),
                RosterEntryArgs("U19CS003", "Efe Ojo"),
            ]
            .into_iter()
            .map(|RosterEntryArgs(m, n)| crate::content_store::RosterEntry {
                matric_no: m.into(),
                name: n.into(),
            })
            .collect(),
        }
    }

    struct RosterEntryArgs(&'static str, &'static str);

    #[test]
    fn detect_override_wins() {
        let profiles = DeviceProfiles::default();
        let markers = default_mobile_markers();
        let p = detect_device(
            Some(DeviceClass::Mobile),
            Some("Mozilla/5.0 (X11; Linux)"),
            &markers,
            &profiles,
        );
        assert_eq!(p.class, DeviceClass::Mobile);
    }

    #[test]
    fn detect_marker_match_is_case_insensitive() {
        let profiles = DeviceProfiles::default();
        let markers = default_mobile_markers();
        let p = detect_device(None, Some("Mozilla/5.0 (Linux; Android 10)"), &markers, &profiles);
        assert_eq!(p.class, DeviceClass::Mobile);
        for ua in [
            "something MOBILE something",
            "Opera Mini browser",
            "Windows Phone 8.1",
            "iPhone OS 12",
            "iPad; CPU OS",
        ] {
            let p = detect_device(None, Some(ua), &markers, &profiles);
            assert_eq!(p.class, DeviceClass::Mobile, "ua {ua:?}");
        }
    }

    #[test]
    fn detect_defaults_to_desktop() {
        let profiles = DeviceProfiles::default();
        let markers = default_mobile_markers();
        assert_eq!(
            detect_device(None, None, &markers, &profiles).class,
            DeviceClass::Desktop
        );
        assert_eq!(
            detect_device(None, Some("curl/8.0"), &markers, &profiles).class,
            DeviceClass::Desktop
        );
    }

    #[test]
    fn unlimited_budget_selects_everything_in_order() {
        let it = item(vec![
            block(BlockKind::Text, 5, false, "low priority"),
            block(BlockKind::Media, 1, false, "http://m"),
            block(BlockKind::Text, 1, true, "essential"),
        ]);
        let sel = select_blocks(&it, &DeviceProfile::desktop_default());
        assert!(!sel.truncated);
        assert_eq!(
            sel.blocks.iter().map(|b| b.index).collect::<Vec<_>>(),
            vec![0, 1, 2]
        );
        assert!(sel.blocks.iter().all(|b| !b.placeholder));
    }

    #[test]
    fn budget_selection_matches_spec_example() {
        // essential text 200 B, prio-2 media 5000 B, prio-1 text 300 B,
        // budget 600, media supported → essential + prio-1 text, truncated.
        let essential = sized_text_block(1, true, 200);
        let mut media = block(BlockKind::Media, 2, false, "http://big");
        media.size_bytes = 5000; // declared rendered size; trusted by selection
        let prio1 = sized_text_block(1, false, 300);
        let it = item(vec![essential, media, prio1]);
        let profile = DeviceProfile {
            class: DeviceClass::Mobile,
            max_payload_bytes: Some(600),
            supports_media: true,
            screen_width_px: 360,
        };
        let sel = select_blocks(&it, &profile);
        assert!(sel.truncated);
        assert_eq!(
            sel.blocks.iter().map(|b| b.index).collect::<Vec<_>>(),
            vec![0, 2]
        );
        assert_eq!(sel.accounted_total(), 500);
    }

    #[test]
    fn essentials_overflow_returns_essentials_only() {
        let it = item(vec![
            sized_text_block(1, true, 400),
            sized_text_block(1, true, 300),
            sized_text_block(1, false, 50),
        ]);
        let profile = DeviceProfile {
            class: DeviceClass::Mobile,
            max_payload_bytes: Some(600),
            supports_media: false,
            screen_width_px: 360,
        };
        let sel = select_blocks(&it, &profile);
        assert!(sel.truncated);
        assert_eq!(
            sel.blocks.iter().map(|b| b.index).collect::<Vec<_>>(),
            vec![0, 1]
        );
        assert_eq!(sel.accounted_total(), 700);
    }

    #[test]
    fn single_oversized_essential_still_truncates() {
        let it = item(vec![sized_text_block(1, true, 20_000)]);
        let sel = select_blocks(&it, &DeviceProfile::mobile_default());
        assert!(sel.truncated);
        assert_eq!(sel.blocks.len(), 1);
    }

    #[test]
    fn media_replaced_by_placeholder_without_media_support() {
        let mut media = block(BlockKind::Media, 1, false, "http://example.edu/clip.mp4");
        media.size_bytes = 9_999_999; // would never fit as-is
        let it = item(vec![media]);
        let sel = select_blocks(&it, &DeviceProfile::mobile_default());
        assert!(!sel.truncated);
        assert!(sel.blocks[0].placeholder);
        assert!(sel.blocks[0].fragment().contains("[media]"));
        assert_eq!(
            sel.blocks[0].accounted_size(),
            sel.blocks[0].block.placeholder_fragment().len() as u64
        );
    }

    #[test]
    fn greedy_prefix_is_monotone_in_budget() {
        let blocks = vec![
            sized_text_block(2, false, 100),
            sized_text_block(1, false, 200),
            sized_text_block(3, false, 60),
            sized_text_block(1, false, 90),
            sized_text_block(5, false, 120),
        ];
        let it = item(blocks);
        let mut previous: Vec<usize> = vec![];
        for budget in (0..=700).step_by(10) {
            let profile = DeviceProfile {
                class: DeviceClass::Mobile,
                max_payload_bytes: Some(budget),
                supports_media: true,
                screen_width_px: 360,
            };
            let sel = select_blocks(&it, &profile);
            let indices: Vec<usize> = sel.blocks.iter().map(|b| b.index).collect();
            for idx in &previous {
                assert!(indices.contains(idx), "budget {budget} dropped block {idx}");
            }
            previous = indices;
        }
    }

    #[test]
    fn roster_renders_as_bordered_table() {
        let r = roster();
        let html = render_html(Content::Roster(&r), None, &DeviceProfile::desktop_default());
        assert_eq!(html.content_type, "text/html");
        assert!(!html.truncated);
        assert!(html.body.contains("<table border='1'>"));
        assert_eq!(html.body.matches("<tr>").count(), 3);
        let first_matric = html.body.find("U19CS001").unwrap();
        let first_name = html.body.find("Amina Bello").unwrap();
        assert!(first_matric < first_name, "matric cell precedes name cell");
        assert_eq!(html.byte_size, html.body.len() as u64);
    }

    #[test]
    fn empty_roster_renders_empty_table() {
        let r = ForumRoster {
            course: "DCS 202".into(),
            entries: vec![],
        };
        let html = render_html(Content::Roster(&r), None, &DeviceProfile::desktop_default());
        assert!(html.body.contains("<table border='1'></table>"));
        assert_eq!(html.body.matches("<tr>").count(), 0);
    }

    #[test]
    fn render_is_deterministic() {
        let r = roster();
        let a = render_html(Content::Roster(&r), None, &DeviceProfile::mobile_default());
        let b = render_html(Content::Roster(&r), None, &DeviceProfile::mobile_default());
        assert_eq!(a.body, b.body);
    }

    #[test]
    fn mobile_render_includes_viewport() {
        let it = item(vec![block(BlockKind::Text, 1, false, "hello")]);
        let sel = select_blocks(&it, &DeviceProfile::mobile_default());
        let html = render_html(Content::Item(&it), Some(&sel), &DeviceProfile::mobile_default());
        assert!(html.body.contains("<meta name=\"viewport\""));
        let desktop = render_html(
            Content::Item(&it),
            Some(&sel),
            &DeviceProfile::desktop_default(),
        );
        assert!(!desktop.body.contains("viewport"));
    }

    #[test]
    fn dynamic_text_is_escaped() {
        let mut r = roster();
        r.entries[0].name = "<script>alert('x')</script>".into();
        let html = render_html(Content::Roster(&r), None, &DeviceProfile::desktop_default());
        assert!(!html.body.contains("<script>"));
        assert!(html.body.contains("&lt;script&gt;"));

        let it = ContentItem {
            course: "DCS 202".into(),
            id: "x".into(),
            title: "<script>t</script>".into(),
            blocks: vec![block(BlockKind::Text, 1, false, "<script>b</script>")],
        };
        let sel = select_blocks(&it, &DeviceProfile::desktop_default());
        let html = render_html(Content::Item(&it), Some(&sel), &DeviceProfile::desktop_default());
        assert!(!html.body.contains("<script>"));
    }

    #[test]
    fn render_xml_restricts_to_selection() {
        let it = item(vec![
            block(BlockKind::Text, 1, false, "one"),
            block(BlockKind::Text, 2, false, "two"),
            block(BlockKind::Text, 3, false, "three"),
        ]);
        let selection = Selection {
            blocks: vec![SelectedBlock {
                index: 1,
                block: it.blocks[1].clone(),
                placeholder: false,
            }],
            truncated: true,
        };
        let xml = render_xml(Content::Item(&it), Some(&selection));
        assert_eq!(xml.content_type, "application/xml");
        assert!(xml.truncated);
        let parsed = crate::content_store::parse_item_xml(xml.body.as_bytes()).unwrap();
        assert_eq!(parsed.blocks.len(), 1);
        assert_eq!(parsed.blocks[0], it.blocks[1]);
    }

    #[test]
    fn render_xml_roster_matches_store_format() {
        let r = roster();
        let xml = render_xml(Content::Roster(&r), None);
        assert_eq!(xml.body, roster_to_xml(&r));
        assert_eq!(
            crate::content_store::parse_roster_xml(xml.body.as_bytes()).unwrap(),
            r
        );
    }

    #[test]
    fn adapt_desktop_html_equals_render_of_all_blocks() {
        let it = item(vec![
            block(BlockKind::Text, 1, false, "alpha"),
            block(BlockKind::Media, 2, false, "http://m"),
        ]);
        let adapted = adapt(Content::Item(&it), &DeviceProfile::desktop_default(), RenderFormat::Html);
        let all = render_html(Content::Item(&it), None, &DeviceProfile::desktop_default());
        assert_eq!(adapted.body, all.body);
        assert!(!adapted.truncated);
    }

    #[test]
    fn adapt_respects_budget_plus_shell() {
        let blocks: Vec<ContentBlock> = (0..40)
            .map(|i| sized_text_block(1 + (i % 5) as u8, i == 0, 800))
            .collect();
        let it = item(blocks);
        let profile = DeviceProfile::mobile_default();
        let adapted = adapt(Content::Item(&it), &profile, RenderFormat::Html);
        assert!(adapted.truncated);
        let max = profile.max_payload_bytes.unwrap() + shell_overhead(&it, &profile);
        assert!(
            adapted.byte_size <= max,
            "{} exceeds {max}",
            adapted.byte_size
        );
    }

    #[test]
    fn adapt_propagates_essentials_overflow_flag() {
        let it = item(vec![sized_text_block(1, true, 20_000)]);
        let adapted = adapt(Content::Item(&it), &DeviceProfile::mobile_default(), RenderFormat::Html);
        assert!(adapted.truncated);
        assert!(adapted.byte_size > 16_384);
    }
}
