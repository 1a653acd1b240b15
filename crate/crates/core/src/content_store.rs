//! File-backed canonical store of learning content.
//!
//! One XML file per item or roster under `<root>/<COURSE>/<id>.xml`, where
//! the directory name is the course code with spaces removed ("DCS 202" →
//! `DCS202/`). Writes go through a temp file plus rename so concurrent
//! readers never observe a torn file.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::RwLock;

use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;
use thiserror::Error;

use crate::xml::{escape_attr, escape_text};

/// The reserved item id addressing a course's forum roster.
pub const ROSTER_ID: &str = "forum";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("malformed file {name}: {message}")]
    MalformedFile { name: String, message: String },
    #[error("duplicate key ({course}, {id})")]
    DuplicateKey { course: String, id: String },
    #[error("({course}, {id}) not found")]
    NotFound { course: String, id: String },
    #[error("invalid item: {0}")]
    InvalidItem(String),
    #[error("invalid roster: {0}")]
    InvalidRoster(String),
}

/// Error from parsing a content/roster XML document.
#[derive(Debug, Error, PartialEq, Eq)]
#[error("{0}")]
pub struct XmlFormatError(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BlockKind {
    Text,
    Media,
    Interactive,
}

impl BlockKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BlockKind::Text => "text",
            BlockKind::Media => "media",
            BlockKind::Interactive => "interactive",
        }
    }

    pub fn from_str(s: &str) -> Option<BlockKind> {
        Some(match s {
            "text" => BlockKind::Text,
            "media" => BlockKind::Media,
            "interactive" => BlockKind::Interactive,
            _ => return None,
        })
    }
}

impl fmt::Display for BlockKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One ordered unit of a content item.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContentBlock {
    pub kind: BlockKind,
    /// 1 (highest) .. 5 (lowest).
    pub priority: u8,
    /// Essential blocks are delivered regardless of budget.
    pub essential: bool,
    /// Byte length of this block's rendered HTML fragment. Recomputed on
    /// every store write; a stored value that disagrees is rejected on load.
    pub size_bytes: u64,
    /// Text content for `text` blocks, media reference URL otherwise.
    pub body: String,
}

impl ContentBlock {
    /// The canonical single-block HTML fragment (full-capability form).
    /// Its byte length defines `size_bytes`.
    pub fn html_fragment(&self) -> String {
        match self.kind {
            BlockKind::Text => {
                format!("<div class=\"block\">{}</div>", escape_text(&self.body))
            }
            BlockKind::Media => format!(
                "<div class=\"block\"><img src=\"{}\"/></div>",
                escape_attr(&self.body)
            ),
            BlockKind::Interactive => format!(
                "<div class=\"block\"><a class=\"interactive\" href=\"{}\">[interactive]</a></div>",
                escape_attr(&self.body)
            ),
        }
    }

    /// The placeholder-link fragment substituted for media and interactive
    /// blocks on devices without media support.
    pub fn placeholder_fragment(&self) -> String {
        format!(
            "<div class=\"block\"><a href=\"{}\">[media]</a></div>",
            escape_attr(&self.body)
        )
    }

    pub fn rendered_size(&self) -> u64 {
        self.html_fragment().len() as u64
    }

    fn validate(&self) -> Result<(), String> {
        if !(1..=5).contains(&self.priority) {
            return Err(format!("block priority {} outside 1..=5", self.priority));
        }
        Ok(())
    }
}

/// Canonical learning content: an ordered list of blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContentItem {
    pub course: String,
    pub id: String,
    pub title: String,
    pub blocks: Vec<ContentBlock>,
}

impl ContentItem {
    fn validate(&self) -> Result<(), String> {
        validate_course(&self.course)?;
        validate_id(&self.id)?;
        if self.id == ROSTER_ID {
            return Err(format!("item id `{ROSTER_ID}` is reserved for rosters"));
        }
        for block in &self.blocks {
            block.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RosterEntry {
    pub matric_no: String,
    pub name: String,
}

/// The student roster of a course forum.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ForumRoster {
    pub course: String,
    pub entries: Vec<RosterEntry>,
}

impl ForumRoster {
    fn validate(&self) -> Result<(), String> {
        validate_course(&self.course)?;
        for (i, entry) in self.entries.iter().enumerate() {
            if entry.matric_no.is_empty() {
                return Err("matric number must not be empty".to_string());
            }
            if self.entries[..i]
                .iter()
                .any(|e| e.matric_no == entry.matric_no)
            {
                return Err(format!("duplicate matric number `{}`", entry.matric_no));
            }
        }
        Ok(())
    }
}

/// Strip spaces from a course code ("DCS 202" → "DCS202"); both the spaced
/// and unspaced spellings address the same course.
pub fn normalize_course(course: &str) -> String {
    course.chars().filter(|c| *c != ' ').collect()
}

fn validate_course(course: &str) -> Result<(), String> {
    let norm = normalize_course(course);
    if norm.is_empty() {
        return Err("course code must not be empty".to_string());
    }
    if !norm.bytes().all(|b| b.is_ascii_alphanumeric()) {
        return Err(format!(
            "course code `{course}` may contain only letters, digits, and spaces"
        ));
    }
    Ok(())
}

fn validate_id(id: &str) -> Result<(), String> {
    let ok = !id.is_empty()
        && id
            .bytes()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_' || b == b'-');
    if ok {
        Ok(())
    } else {
        Err(format!(
            "item id `{id}` may contain only lowercase letters, digits, `_`, and `-`"
        ))
    }
}

/// A parsed store file: either an item or a roster document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StoreFile {
    Item(ContentItem),
    Roster(ForumRoster),
}

struct StoreData {
    items: HashMap<(String, String), ContentItem>,
    rosters: HashMap<String, ForumRoster>,
}

/// Handle over a loaded content directory. Reads are concurrent; writes are
/// exclusive and atomic on disk (temp file + rename).
pub struct ContentStore {
    root: PathBuf,
    data: RwLock<StoreData>,
    write_seq: AtomicU64,
}

impl ContentStore {
    /// Load every `*.xml` file under `root`, failing fast on the first
    /// malformed file or uniqueness violation.
    pub fn load(root: impl Into<PathBuf>) -> Result<ContentStore, StoreError> {
        let root = root.into();
        let mut data = StoreData {
            items: HashMap::new(),
            rosters: HashMap::new(),
        };
        let entries = fs::read_dir(&root).map_err(|source| StoreError::Io {
            path: root.clone(),
            source,
        })?;
        let mut files: Vec<PathBuf> = Vec::new();
        for entry in entries {
            let entry = entry.map_err(|source| StoreError::Io {
                path: root.clone(),
                source,
            })?;
            let path = entry.path();
            if !path.is_dir() {
                continue;
            }
            let children = fs::read_dir(&path).map_err(|source| StoreError::Io {
                path: path.clone(),
                source,
            })?;
            for child in children {
                let child = child.map_err(|source| StoreError::Io {
                    path: path.clone(),
                    source,
                })?;
                let child_path = child.path();
                if child_path.extension().and_then(|e| e.to_str()) == Some("xml") {
                    files.push(child_path);
                }
            }
        }
        // Deterministic load order so duplicate-key reporting is stable.
        files.sort();

        for path in files {
            let name = path
                .strip_prefix(&root)
                .unwrap_or(&path)
                .to_string_lossy()
                .into_owned();
            let bytes = fs::read(&path).map_err(|source| StoreError::Io {
                path: path.clone(),
                source,
            })?;
            let parsed = parse_store_file(&bytes).map_err(|e| StoreError::MalformedFile {
                name: name.clone(),
                message: e.0,
            })?;
            match parsed {
                StoreFile::Item(item) => {
                    item.validate().map_err(|message| StoreError::MalformedFile {
                        name: name.clone(),
                        message,
                    })?;
                    for block in &item.blocks {
                        if block.size_bytes != block.rendered_size() {
                            return Err(StoreError::MalformedFile {
                                name: name.clone(),
                                message: format!(
                                    "sizeBytes {} does not match rendered size {}",
                                    block.size_bytes,
                                    block.rendered_size()
                                ),
                            });
                        }
                    }
                    let key = (normalize_course(&item.course), item.id.clone());
                    if data.items.contains_key(&key) {
                        return Err(StoreError::DuplicateKey {
                            course: item.course,
                            id: item.id,
                        });
                    }
                    data.items.insert(key, item);
                }
                StoreFile::Roster(roster) => {
                    roster
                        .validate()
                        .map_err(|message| StoreError::MalformedFile {
                            name: name.clone(),
                            message,
                        })?;
                    let key = normalize_course(&roster.course);
                    if data.rosters.contains_key(&key) {
                        return Err(StoreError::DuplicateKey {
                            course: roster.course,
                            id: ROSTER_ID.to_string(),
                        });
                    }
                    data.rosters.insert(key, roster);
                }
            }
        }

        Ok(ContentStore {
            root,
            data: RwLock::new(data),
            write_seq: AtomicU64::new(0),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn item_count(&self) -> usize {
        self.data.read().expect("store lock poisoned").items.len()
    }

    pub fn roster_count(&self) -> usize {
        self.data.read().expect("store lock poisoned").rosters.len()
    }

    pub fn get_item(&self, course: &str, id: &str) -> Result<ContentItem, StoreError> {
        let data = self.data.read().expect("store lock poisoned");
        data.items
            .get(&(normalize_course(course), id.to_string()))
            .cloned()
            .ok_or_else(|| StoreError::NotFound {
                course: course.to_string(),
                id: id.to_string(),
            })
    }

    pub fn get_roster(&self, course: &str) -> Result<ForumRoster, StoreError> {
        let data = self.data.read().expect("store lock poisoned");
        data.rosters
            .get(&normalize_course(course))
            .cloned()
            .ok_or_else(|| StoreError::NotFound {
                course: course.to_string(),
                id: ROSTER_ID.to_string(),
            })
    }

    /// Case-insensitive substring search over item titles and text-block
    /// bodies. Results sorted by (course, id); the empty query matches all.
    pub fn search(&self, query: &str) -> Vec<(String, String, String)> {
        let needle = query.to_lowercase();
        let data = self.data.read().expect("store lock poisoned");
        let mut hits: Vec<(String, String, String)> = data
            .items
            .values()
            .filter(|item| {
                item.title.to_lowercase().contains(&needle)
                    || item.blocks.iter().any(|b| {
                        b.kind == BlockKind::Text && b.body.to_lowercase().contains(&needle)
                    })
            })
            .map(|item| (item.course.clone(), item.id.clone(), item.title.clone()))
            .collect();
        hits.sort();
        hits
    }

    /// Persist an item atomically and make it visible to readers. Block
    /// sizes are recomputed before the write.
    pub fn put_item(&self, mut item: ContentItem) -> Result<(), StoreError> {
        for block in &mut item.blocks {
            block.size_bytes = block.rendered_size();
        }
        item.validate().map_err(StoreError::InvalidItem)?;
        let rel = format!("{}/{}.xml", normalize_course(&item.course), item.id);
        self.write_atomic(&rel, item_to_xml(&item).as_bytes())?;
        let mut data = self.data.write().expect("store lock poisoned");
        data.items
            .insert((normalize_course(&item.course), item.id.clone()), item);
        Ok(())
    }

    /// Persist a roster atomically and make it visible to readers.
    pub fn put_roster(&self, roster: ForumRoster) -> Result<(), StoreError> {
        roster.validate().map_err(StoreError::InvalidRoster)?;
        let rel = format!("{}/{}.xml", normalize_course(&roster.course), ROSTER_ID);
        self.write_atomic(&rel, roster_to_xml(&roster).as_bytes())?;
        let mut data = self.data.write().expect("store lock poisoned");
        data.rosters.insert(normalize_course(&roster.course), roster);
        Ok(())
    }

    fn write_atomic(&self, rel: &str, bytes: &[u8]) -> Result<(), StoreError> {
        let path = self.root.join(rel);
        let dir = path.parent().expect("store paths always have a parent");
        fs::create_dir_all(dir).map_err(|source| StoreError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let seq = self.write_seq.fetch_add(1, Ordering::Relaxed);
        let tmp = path.with_extension(format!("xml.tmp.{}.{seq}", std::process::id()));
        fs::write(&tmp, bytes).map_err(|source| StoreError::Io {
            path: tmp.clone(),
            source,
        })?;
        fs::rename(&tmp, &path).map_err(|source| StoreError::Io { path, source })
    }
}

/// Serialize an item to its store file format.
pub fn item_to_xml(item: &ContentItem) -> String {
    let open = format!(
        "<ContentItem course=\"{}\" id=\"{}\" title=\"{}\"",
        escape_attr(&item.course),
        escape_attr(&item.id),
        escape_attr(&item.title)
    );
    if item.blocks.is_empty() {
        return format!("{open}/>\n");
    }
    let mut out = format!("{open}>\n");
    for block in &item.blocks {
        out.push_str(&format!(
            "  <Block kind=\"{}\" priority=\"{}\" essential=\"{}\" sizeBytes=\"{}\">{}</Block>\n",
            block.kind.as_str(),
            block.priority,
            block.essential,
            block.size_bytes,
            escape_text(&block.body)
        ));
    }
    out.push_str("</ContentItem>\n");
    out
}

/// Serialize a roster to its store file format.
pub fn roster_to_xml(roster: &ForumRoster) -> String {
    let open = format!("<ForumRoster course=\"{}\"", escape_attr(&roster.course));
    if roster.entries.is_empty() {
        return format!("{open}/>\n");
    }
    let mut out = format!("{open}>\n");
    for entry in &roster.entries {
        out.push_str(&format!(
            "  <Student matricNo=\"{}\">{}</Student>\n",
            escape_attr(&entry.matric_no),
            escape_text(&entry.name)
        ));
    }
    out.push_str("</ForumRoster>\n");
    out
}

/// Parse a store file, dispatching on its root element.
pub fn parse_store_file(input: &[u8]) -> Result<StoreFile, XmlFormatError> {
    let mut reader = Reader::from_reader(input);
    reader.config_mut().expand_empty_elements = true;
    loop {
        match reader.read_event() {
            Ok(Event::Start(e)) => {
                return match e.name().as_ref() {
                    b"ContentItem" => {
                        parse_item_body(&mut reader, &e.into_owned()).map(StoreFile::Item)
                    }
                    b"ForumRoster" => {
                        parse_roster_body(&mut reader, &e.into_owned()).map(StoreFile::Roster)
                    }
                    other => Err(XmlFormatError(format!(
                        "unknown root element `{}`",
                        String::from_utf8_lossy(other)
                    ))),
                };
            }
            Ok(Event::Decl(_)) | Ok(Event::Comment(_)) | Ok(Event::PI(_)) => continue,
            Ok(Event::Text(t)) => {
                let text = t.unescape().map_err(|e| XmlFormatError(e.to_string()))?;
                if !text.trim().is_empty() {
                    return Err(XmlFormatError("unexpected text before root".to_string()));
                }
            }
            Ok(Event::Eof) => return Err(XmlFormatError("empty document".to_string())),
            Ok(_) => return Err(XmlFormatError("unexpected content before root".to_string())),
            Err(e) => return Err(XmlFormatError(e.to_string())),
        }
    }
}

/// Parse a `<ContentItem>` document.
pub fn parse_item_xml(input: &[u8]) -> Result<ContentItem, XmlFormatError> {
    match parse_store_file(input)? {
        StoreFile::Item(item) => Ok(item),
        StoreFile::Roster(_) => Err(XmlFormatError("expected a ContentItem document".into())),
    }
}

/// Parse a `<ForumRoster>` document.
pub fn parse_roster_xml(input: &[u8]) -> Result<ForumRoster, XmlFormatError> {
    match parse_store_file(input)? {
        StoreFile::Roster(roster) => Ok(roster),
        StoreFile::Item(_) => Err(XmlFormatError("expected a ForumRoster document".into())),
    }
}

fn attr_of(e: &BytesStart<'_>, name: &str) -> Result<String, XmlFormatError> {
    for attr in e.attributes() {
        let attr = attr.map_err(|err| XmlFormatError(err.to_string()))?;
        if attr.key.as_ref() == name.as_bytes() {
            return attr
                .unescape_value()
                .map(|v| v.into_owned())
                .map_err(|err| XmlFormatError(err.to_string()));
        }
    }
    Err(XmlFormatError(format!("missing `{name}` attribute")))
}

fn element_text(reader: &mut Reader<&[u8]>, element: &str) -> Result<String, XmlFormatError> {
    let mut out = String::new();
    loop {
        match reader.read_event() {
            Ok(Event::Text(t)) => {
                out.push_str(&t.unescape().map_err(|e| XmlFormatError(e.to_string()))?)
            }
            Ok(Event::CData(c)) => out.push_str(
                std::str::from_utf8(c.as_ref()).map_err(|e| XmlFormatError(e.to_string()))?,
            ),
            Ok(Event::Comment(_)) => continue,
            Ok(Event::End(_)) => return Ok(out),
            Ok(_) => {
                return Err(XmlFormatError(format!(
                    "`{element}` must contain only text"
                )))
            }
            Err(e) => return Err(XmlFormatError(e.to_string())),
        }
    }
}

fn parse_item_body(
    reader: &mut Reader<&[u8]>,
    root: &BytesStart<'_>,
) -> Result<ContentItem, XmlFormatError> {
    let course = attr_of(root, "course")?;
    let id = attr_of(root, "id")?;
    let title = attr_of(root, "title")?;
    let mut blocks = Vec::new();
    loop {
        match reader.read_event() {
            Ok(Event::Start(e)) => {
                if e.name().as_ref() != b"Block" {
                    return Err(XmlFormatError(
                        "ContentItem may contain only `Block` elements".to_string(),
                    ));
                }
                let kind_raw = attr_of(&e, "kind")?;
                let kind = BlockKind::from_str(&kind_raw)
                    .ok_or_else(|| XmlFormatError(format!("unknown block kind `{kind_raw}`")))?;
                let priority: u8 = attr_of(&e, "priority")?
                    .parse()
                    .map_err(|_| XmlFormatError("priority must be an integer".to_string()))?;
                if !(1..=5).contains(&priority) {
                    return Err(XmlFormatError(format!(
                        "block priority {priority} outside 1..=5"
                    )));
                }
                let essential = match attr_of(&e, "essential")?.as_str() {
                    "true" => true,
                    "false" => false,
                    other => {
                        return Err(XmlFormatError(format!(
                            "essential must be true or false, got `{other}`"
                        )))
                    }
                };
                let size_bytes: u64 = attr_of(&e, "sizeBytes")?
                    .parse()
                    .map_err(|_| XmlFormatError("sizeBytes must be an integer".to_string()))?;
                let body = element_text(reader, "Block")?;
                blocks.push(ContentBlock {
                    kind,
                    priority,
                    essential,
                    size_bytes,
                    body,
                });
            }
            Ok(Event::End(_)) => {
                return Ok(ContentItem {
                    course,
                    id,
                    title,
                    blocks,
                })
            }
            Ok(Event::Text(t)) => {
                let text = t.unescape().map_err(|e| XmlFormatError(e.to_string()))?;
                if !text.trim().is_empty() {
                    return Err(XmlFormatError("unexpected text in ContentItem".to_string()));
                }
            }
            Ok(Event::Comment(_)) => continue,
            Ok(Event::Eof) => return Err(XmlFormatError("unexpected end of input".to_string())),
            Ok(_) => return Err(XmlFormatError("unexpected content in ContentItem".to_string())),
            Err(e) => return Err(XmlFormatError(e.to_string())),
        }
    }
}

fn parse_roster_body(
    reader: &mut Reader<&[u8]>,
    root: &BytesStart<'_>,
) -> Result<ForumRoster, XmlFormatError> {
    let course = attr_of(root, "course")?;
    let mut entries = Vec::new();
    loop {
        match reader.read_event() {
            Ok(Event::Start(e)) => {
                if e.name().as_ref() != b"Student" {
                    return Err(XmlFormatError(
                        "ForumRoster may contain only `Student` elements".to_string(),
                    ));
                }
                let matric_no = attr_of(&e, "matricNo")?;
                let name = element_text(reader, "Student")?;
                entries.push(RosterEntry { matric_no, name });
            }
            Ok(Event::End(_)) => return Ok(ForumRoster { course, entries }),
            Ok(Event::Text(t)) => {
                let text = t.unescape().map_err(|e| XmlFormatError(e.to_string()))?;
                if !text.trim().is_empty() {
                    return Err(XmlFormatError("unexpected text in ForumRoster".to_string()));
                }
            }
            Ok(Event::Comment(_)) => continue,
            Ok(Event::Eof) => return Err(XmlFormatError("unexpected end of input".to_string())),
            Ok(_) => return Err(XmlFormatError("unexpected content in ForumRoster".to_string())),
            Err(e) => return Err(XmlFormatError(e.to_string())),
        }
    }
}
