//! XML message envelopes.
//!
//! Every request, response, and fault exchanged between clients and the
//! gateway travels inside a [`MessageEnvelope`]. The wire format is a small
//! fixed XML schema:
//!
//! ```xml
//! <Envelope version="1.0">
//!   <Header><Session>HEX32</Session><Device class="mobile"/></Header>
//!   <Body>
//!     <Request service="content" operation="get"><Param name="course">DCS 202</Param></Request>
//!   </Body>
//! </Envelope>
//! ```
//!
//! Serialization is deterministic (equal envelopes yield identical bytes) and
//! [`parse`] inverts [`MessageEnvelope::serialize`] for every envelope that
//! satisfies the type invariants.

use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;
use thiserror::Error;

use crate::adapter::DeviceClass;
use crate::xml::{escape_attr, escape_text, is_well_formed_fragment};

/// Protocol version stamped on every envelope this crate produces.
pub const PROTOCOL_VERSION: &str = "1.0";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EnvelopeError {
    #[error("invalid name `{0}`: names must match [a-z][a-z0-9_-]*")]
    InvalidName(String),
    #[error("duplicate parameter name `{0}`")]
    DuplicateParam(String),
    #[error("fault reason must not be empty")]
    EmptyReason,
    #[error("invalid session token `{0}`: expected 32 lowercase hex characters")]
    InvalidSession(String),
    #[error("payload is not well-formed markup")]
    InvalidPayload,
    #[error("malformed envelope at byte {position}: {message}")]
    Malformed { position: usize, message: String },
    #[error("unsupported envelope version `{0}`")]
    UnsupportedVersion(String),
}

impl EnvelopeError {
    fn malformed(position: usize, message: impl Into<String>) -> Self {
        EnvelopeError::Malformed {
            position,
            message: message.into(),
        }
    }
}

/// Optional per-call metadata carried outside the body.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EnvelopeHeader {
    /// Session token minted by the login service; 32 lowercase hex chars.
    pub session: Option<String>,
    /// Explicit device class, overriding user-agent detection.
    pub device_class_override: Option<DeviceClass>,
}

impl EnvelopeHeader {
    pub fn with_session(token: impl Into<String>) -> Self {
        EnvelopeHeader {
            session: Some(token.into()),
            device_class_override: None,
        }
    }

    fn validate(&self) -> Result<(), EnvelopeError> {
        if let Some(s) = &self.session {
            if !is_session_token(s) {
                return Err(EnvelopeError::InvalidSession(s.clone()));
            }
        }
        Ok(())
    }
}

/// An RPC call: target service, operation, and ordered named parameters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Request {
    pub service: String,
    pub operation: String,
    pub params: Vec<(String, String)>,
}

impl Request {
    /// Value of a named parameter, if present.
    pub fn param(&self, name: &str) -> Option<&str> {
        self.params
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_str())
    }
}

/// The rendered payload carried by a [`Response`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResponsePayload {
    pub content_type: String,
    /// Well-formed markup, embedded verbatim in the envelope.
    pub markup: String,
}

/// A successful reply: meta key/value pairs plus the payload markup.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Response {
    pub service: String,
    pub operation: String,
    pub meta: Vec<(String, String)>,
    pub payload: ResponsePayload,
}

impl Response {
    pub fn meta_value(&self, name: &str) -> Option<&str> {
        self.meta
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_str())
    }
}

/// RPC error channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FaultCode {
    Malformed,
    AuthRequired,
    AuthFailed,
    NotFound,
    UnsupportedOperation,
    Internal,
}

impl FaultCode {
    pub fn as_str(self) -> &'static str {
        match self {
            FaultCode::Malformed => "MALFORMED",
            FaultCode::AuthRequired => "AUTH_REQUIRED",
            FaultCode::AuthFailed => "AUTH_FAILED",
            FaultCode::NotFound => "NOT_FOUND",
            FaultCode::UnsupportedOperation => "UNSUPPORTED_OPERATION",
            FaultCode::Internal => "INTERNAL",
        }
    }

    pub fn from_str(s: &str) -> Option<FaultCode> {
        Some(match s {
            "MALFORMED" => FaultCode::Malformed,
            "AUTH_REQUIRED" => FaultCode::AuthRequired,
            "AUTH_FAILED" => FaultCode::AuthFailed,
            "NOT_FOUND" => FaultCode::NotFound,
            "UNSUPPORTED_OPERATION" => FaultCode::UnsupportedOperation,
            "INTERNAL" => FaultCode::Internal,
            _ => return None,
        })
    }
}

impl std::fmt::Display for FaultCode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fault {
    pub code: FaultCode,
    pub reason: String,
}

/// Exactly one body variant per envelope.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Body {
    Request(Request),
    Response(Response),
    Fault(Fault),
}

/// The XML unit wrapping every call on the wire.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MessageEnvelope {
    pub version: String,
    pub header: EnvelopeHeader,
    pub body: Body,
}

/// True iff `s` is a 32-character lowercase hex string.
pub fn is_session_token(s: &str) -> bool {
    s.len() == 32 && s.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
}

/// True iff `s` matches the service/operation name grammar `[a-z][a-z0-9_-]*`.
pub fn is_valid_name(s: &str) -> bool {
    let mut bytes = s.bytes();
    match bytes.next() {
        Some(b) if b.is_ascii_lowercase() => {}
        _ => return false,
    }
    bytes.all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_' || b == b'-')
}

fn check_name(s: &str) -> Result<(), EnvelopeError> {
    if is_valid_name(s) {
        Ok(())
    } else {
        Err(EnvelopeError::InvalidName(s.to_string()))
    }
}

fn check_unique_params(params: &[(String, String)]) -> Result<(), EnvelopeError> {
    for (i, (name, _)) in params.iter().enumerate() {
        if params[..i].iter().any(|(n, _)| n == name) {
            return Err(EnvelopeError::DuplicateParam(name.clone()));
        }
    }
    Ok(())
}

/// Build a request envelope.
pub fn build_request(
    service: &str,
    operation: &str,
    params: Vec<(String, String)>,
    header: EnvelopeHeader,
) -> Result<MessageEnvelope, EnvelopeError> {
    check_name(service)?;
    check_name(operation)?;
    check_unique_params(&params)?;
    header.validate()?;
    Ok(MessageEnvelope {
        version: PROTOCOL_VERSION.to_string(),
        header,
        body: Body::Request(Request {
            service: service.to_string(),
            operation: operation.to_string(),
            params,
        }),
    })
}

/// Build a response envelope. The payload must be well-formed markup.
pub fn build_response(
    service: &str,
    operation: &str,
    meta: Vec<(String, String)>,
    payload: ResponsePayload,
) -> Result<MessageEnvelope, EnvelopeError> {
    check_name(service)?;
    check_name(operation)?;
    if !is_well_formed_fragment(&payload.markup) {
        return Err(EnvelopeError::InvalidPayload);
    }
    Ok(MessageEnvelope {
        version: PROTOCOL_VERSION.to_string(),
        header: EnvelopeHeader::default(),
        body: Body::Response(Response {
            service: service.to_string(),
            operation: operation.to_string(),
            meta,
            payload,
        }),
    })
}

/// Build a fault envelope.
pub fn build_fault(code: FaultCode, reason: &str) -> Result<MessageEnvelope, EnvelopeError> {
    if reason.is_empty() {
        return Err(EnvelopeError::EmptyReason);
    }
    Ok(MessageEnvelope {
        version: PROTOCOL_VERSION.to_string(),
        header: EnvelopeHeader::default(),
        body: Body::Fault(Fault {
            code,
            reason: reason.to_string(),
        }),
    })
}

impl MessageEnvelope {
    /// Serialize to the canonical wire format (UTF-8 text).
    ///
    /// Pure and deterministic: equal envelopes serialize to identical bytes.
    pub fn serialize(&self) -> String {
        let mut out = String::with_capacity(256);
        out.push_str(&format!(
            "<Envelope version=\"{}\">\n",
            escape_attr(&self.version)
        ));

        let h = &self.header;
        if h.session.is_none() && h.device_class_override.is_none() {
            out.push_str("  <Header/>\n");
        } else {
            out.push_str("  <Header>");
            if let Some(s) = &h.session {
                out.push_str(&format!("<Session>{}</Session>", escape_text(s)));
            }
            if let Some(d) = h.device_class_override {
                out.push_str(&format!("<Device class=\"{}\"/>", d.as_str()));
            }
            out.push_str("</Header>\n");
        }

        out.push_str("  <Body>\n    ");
        match &self.body {
            Body::Request(r) => {
                out.push_str(&format!(
                    "<Request service=\"{}\" operation=\"{}\">",
                    escape_attr(&r.service),
                    escape_attr(&r.operation)
                ));
                for (name, value) in &r.params {
                    out.push_str(&format!(
                        "<Param name=\"{}\">{}</Param>",
                        escape_attr(name),
                        escape_text(value)
                    ));
                }
                out.push_str("</Request>");
            }
            Body::Response(r) => {
                out.push_str(&format!(
                    "<Response service=\"{}\" operation=\"{}\">",
                    escape_attr(&r.service),
                    escape_attr(&r.operation)
                ));
                for (name, value) in &r.meta {
                    out.push_str(&format!(
                        "<Meta name=\"{}\">{}</Meta>",
                        escape_attr(name),
                        escape_text(value)
                    ));
                }
                // Payload markup is well-formed by invariant; embed verbatim.
                out.push_str(&format!(
                    "<Payload contentType=\"{}\">{}</Payload>",
                    escape_attr(&r.payload.content_type),
                    r.payload.markup
                ));
                out.push_str("</Response>");
            }
            Body::Fault(f) => {
                out.push_str(&format!(
                    "<Fault code=\"{}\">{}</Fault>",
                    f.code.as_str(),
                    escape_text(&f.reason)
                ));
            }
        }
        out.push_str("\n  </Body>\n</Envelope>\n");
        out
    }

    /// Parse an envelope from UTF-8 XML bytes. Inverse of [`serialize`] for
    /// invariant-satisfying envelopes; accepts arbitrary inter-element
    /// whitespace and ignores unknown header elements.
    ///
    /// [`serialize`]: MessageEnvelope::serialize
    pub fn parse(input: &[u8]) -> Result<MessageEnvelope, EnvelopeError> {
        Parser::new(input).parse()
    }
}

/// Shorthand for [`MessageEnvelope::parse`].
pub fn parse(input: &[u8]) -> Result<MessageEnvelope, EnvelopeError> {
    MessageEnvelope::parse(input)
}

struct Parser<'a> {
    reader: Reader<&'a [u8]>,
    input: &'a [u8],
}

impl<'a> Parser<'a> {
    fn new(input: &'a [u8]) -> Self {
        let mut reader = Reader::from_reader(input);
        reader.config_mut().expand_empty_elements = true;
        Parser { reader, input }
    }

    fn pos(&self) -> usize {
        self.reader.buffer_position() as usize
    }

    fn err(&self, message: impl Into<String>) -> EnvelopeError {
        EnvelopeError::malformed(self.pos(), message)
    }

    fn next_event(&mut self) -> Result<Event<'a>, EnvelopeError> {
        self.reader
            .read_event()
            .map_err(|e| EnvelopeError::malformed(self.reader.buffer_position() as usize, e.to_string()))
    }

    /// Next structural event, skipping comments, PIs, and whitespace text.
    fn next_structural(&mut self) -> Result<Event<'a>, EnvelopeError> {
        loop {
            match self.next_event()? {
                Event::Comment(_) | Event::PI(_) | Event::Decl(_) | Event::DocType(_) => continue,
                Event::Text(t) => {
                    let text = t
                        .unescape()
                        .map_err(|e| self.err(e.to_string()))?;
                    if text.trim().is_empty() {
                        continue;
                    }
                    return Err(self.err(format!("unexpected text `{}`", text.trim())));
                }
                ev => return Ok(ev),
            }
        }
    }

    fn attr(&self, e: &BytesStart<'_>, name: &str) -> Result<Option<String>, EnvelopeError> {
        for attr in e.attributes() {
            let attr = attr.map_err(|err| self.err(err.to_string()))?;
            if attr.key.as_ref() == name.as_bytes() {
                let v = attr
                    .unescape_value()
                    .map_err(|err| self.err(err.to_string()))?;
                return Ok(Some(v.into_owned()));
            }
        }
        Ok(None)
    }

    fn require_attr(&self, e: &BytesStart<'_>, name: &str) -> Result<String, EnvelopeError> {
        self.attr(e, name)?
            .ok_or_else(|| self.err(format!("missing `{name}` attribute")))
    }

    /// Collect the text content of the current element up to its end tag.
    fn text_content(&mut self, element: &str) -> Result<String, EnvelopeError> {
        let mut out = String::new();
        loop {
            match self.next_event()? {
                Event::Text(t) => {
                    out.push_str(&t.unescape().map_err(|e| self.err(e.to_string()))?)
                }
                Event::CData(c) => {
                    let raw = std::str::from_utf8(c.as_ref())
                        .map_err(|e| self.err(e.to_string()))?;
                    out.push_str(raw);
                }
                Event::Comment(_) | Event::PI(_) => continue,
                Event::End(_) => return Ok(out),
                Event::Start(_) => {
                    return Err(self.err(format!("`{element}` must contain only text")))
                }
                Event::Eof => return Err(self.err("unexpected end of input")),
                _ => return Err(self.err(format!("unexpected content in `{element}`"))),
            }
        }
    }

    fn parse(mut self) -> Result<MessageEnvelope, EnvelopeError> {
        // Root element.
        let root = match self.next_structural()? {
            Event::Start(e) => e,
            Event::Eof => return Err(self.err("empty input")),
            _ => return Err(self.err("expected `Envelope` root element")),
        };
        if root.name().as_ref() != b"Envelope" {
            return Err(self.err("expected `Envelope` root element"));
        }
        let root = root.into_owned();
        let version = self.require_attr(&root, "version")?;
        if version != PROTOCOL_VERSION {
            return Err(EnvelopeError::UnsupportedVersion(version));
        }

        let mut header: Option<EnvelopeHeader> = None;
        let mut body: Option<Body> = None;
        loop {
            match self.next_structural()? {
                Event::Start(e) => match e.name().as_ref() {
                    b"Header" => {
                        if header.is_some() {
                            return Err(self.err("duplicate `Header` element"));
                        }
                        header = Some(self.parse_header()?);
                    }
                    b"Body" => {
                        if body.is_some() {
                            return Err(self.err("duplicate `Body` element"));
                        }
                        body = Some(self.parse_body()?);
                    }
                    other => {
                        let name = String::from_utf8_lossy(other).into_owned();
                        return Err(self.err(format!("unexpected element `{name}` in Envelope")));
                    }
                },
                Event::End(_) => break,
                Event::Eof => return Err(self.err("unexpected end of input")),
                _ => return Err(self.err("unexpected content in Envelope")),
            }
        }
        let body = body.ok_or_else(|| self.err("Envelope has no `Body`"))?;

        // Nothing but whitespace/comments may follow the root.
        loop {
            match self.next_event()? {
                Event::Eof => break,
                Event::Comment(_) | Event::PI(_) | Event::Decl(_) => continue,
                Event::Text(t) => {
                    let text = t.unescape().map_err(|e| self.err(e.to_string()))?;
                    if !text.trim().is_empty() {
                        return Err(self.err("trailing content after Envelope"));
                    }
                }
                _ => return Err(self.err("trailing content after Envelope")),
            }
        }

        Ok(MessageEnvelope {
            version,
            header: header.unwrap_or_default(),
            body,
        })
    }

    fn parse_header(&mut self) -> Result<EnvelopeHeader, EnvelopeError> {
        let mut out = EnvelopeHeader::default();
        loop {
            match self.next_structural()? {
                Event::Start(e) => match e.name().as_ref() {
                    b"Session" => {
                        if out.session.is_some() {
                            return Err(self.err("duplicate `Session` element"));
                        }
                        let token = self.text_content("Session")?;
                        if !is_session_token(&token) {
                            return Err(
                                self.err("session token must be 32 lowercase hex characters")
                            );
                        }
                        out.session = Some(token);
                    }
                    b"Device" => {
                        if out.device_class_override.is_some() {
                            return Err(self.err("duplicate `Device` element"));
                        }
                        let class = self.require_attr(&e, "class")?;
                        let class = DeviceClass::from_str(&class)
                            .ok_or_else(|| self.err(format!("unknown device class `{class}`")))?;
                        out.device_class_override = Some(class);
                        self.skip_to_end(&e)?;
                    }
                    // Unknown header elements are ignored for forward compatibility.
                    _ => {
                        let e = e.into_owned();
                        self.skip_to_end(&e)?;
                    }
                },
                Event::End(_) => return Ok(out),
                Event::Eof => return Err(self.err("unexpected end of input in Header")),
                _ => return Err(self.err("unexpected content in Header")),
            }
        }
    }

    fn skip_to_end(&mut self, start: &BytesStart<'_>) -> Result<(), EnvelopeError> {
        self.reader
            .read_to_end(start.name())
            .map(|_| ())
            .map_err(|e| EnvelopeError::malformed(self.reader.buffer_position() as usize, e.to_string()))
    }

    fn parse_body(&mut self) -> Result<Body, EnvelopeError> {
        let mut body: Option<Body> = None;
        loop {
            match self.next_structural()? {
                Event::Start(e) => {
                    if body.is_some() {
                        return Err(self.err("Body must contain exactly one variant"));
                    }
                    body = Some(match e.name().as_ref() {
                        b"Request" => Body::Request(self.parse_request(&e.into_owned())?),
                        b"Response" => Body::Response(self.parse_response(&e.into_owned())?),
                        b"Fault" => Body::Fault(self.parse_fault(&e.into_owned())?),
                        other => {
                            let name = String::from_utf8_lossy(other).into_owned();
                            return Err(self.err(format!("unknown body element `{name}`")));
                        }
                    });
                }
                Event::End(_) => {
                    return body.ok_or_else(|| self.err("Body has no Request/Response/Fault"));
                }
                Event::Eof => return Err(self.err("unexpected end of input in Body")),
                _ => return Err(self.err("unexpected content in Body")),
            }
        }
    }

    fn parse_service_operation(
        &self,
        e: &BytesStart<'_>,
    ) -> Result<(String, String), EnvelopeError> {
        let service = self.require_attr(e, "service")?;
        let operation = self.require_attr(e, "operation")?;
        if !is_valid_name(&service) {
            return Err(self.err(format!("invalid service name `{service}`")));
        }
        if !is_valid_name(&operation) {
            return Err(self.err(format!("invalid operation name `{operation}`")));
        }
        Ok((service, operation))
    }

    fn parse_request(&mut self, start: &BytesStart<'_>) -> Result<Request, EnvelopeError> {
        let (service, operation) = self.parse_service_operation(start)?;
        let mut params: Vec<(String, String)> = Vec::new();
        loop {
            match self.next_structural()? {
                Event::Start(e) => {
                    if e.name().as_ref() != b"Param" {
                        return Err(self.err("Request may contain only `Param` elements"));
                    }
                    let name = self.require_attr(&e, "name")?;
                    if params.iter().any(|(n, _)| *n == name) {
                        return Err(self.err(format!("duplicate parameter name `{name}`")));
                    }
                    let value = self.text_content("Param")?;
                    params.push((name, value));
                }
                Event::End(_) => {
                    return Ok(Request {
                        service,
                        operation,
                        params,
                    })
                }
                Event::Eof => return Err(self.err("unexpected end of input in Request")),
                _ => return Err(self.err("unexpected content in Request")),
            }
        }
    }

    fn parse_response(&mut self, start: &BytesStart<'_>) -> Result<Response, EnvelopeError> {
        let (service, operation) = self.parse_service_operation(start)?;
        let mut meta: Vec<(String, String)> = Vec::new();
        let mut payload: Option<ResponsePayload> = None;
        loop {
            match self.next_structural()? {
                Event::Start(e) => match e.name().as_ref() {
                    b"Meta" => {
                        if payload.is_some() {
                            return Err(self.err("`Meta` must precede `Payload`"));
                        }
                        let name = self.require_attr(&e, "name")?;
                        let value = self.text_content("Meta")?;
                        meta.push((name, value));
                    }
                    b"Payload" => {
                        if payload.is_some() {
                            return Err(self.err("duplicate `Payload` element"));
                        }
                        let content_type = self.require_attr(&e, "contentType")?;
                        let name = e.name().into_owned();
                        let span = self
                            .reader
                            .read_to_end(name.as_ref().into())
                            .map_err(|err| {
                                EnvelopeError::malformed(
                                    self.reader.buffer_position() as usize,
                                    err.to_string(),
                                )
                            })?;
                        let raw = &self.input[span.start as usize..span.end as usize];
                        let markup = std::str::from_utf8(raw)
                            .map_err(|err| self.err(err.to_string()))?
                            .to_string();
                        if !is_well_formed_fragment(&markup) {
                            return Err(self.err("payload is not well-formed markup"));
                        }
                        payload = Some(ResponsePayload {
                            content_type,
                            markup,
                        });
                    }
                    other => {
                        let name = String::from_utf8_lossy(other).into_owned();
                        return Err(self.err(format!("unexpected element `{name}` in Response")));
                    }
                },
                Event::End(_) => {
                    let payload =
                        payload.ok_or_else(|| self.err("Response has no `Payload`"))?;
                    return Ok(Response {
                        service,
                        operation,
                        meta,
                        payload,
                    });
                }
                Event::Eof => return Err(self.err("unexpected end of input in Response")),
                _ => return Err(self.err("unexpected content in Response")),
            }
        }
    }

    fn parse_fault(&mut self, start: &BytesStart<'_>) -> Result<Fault, EnvelopeError> {
        let code = self.require_attr(start, "code")?;
        let code = FaultCode::from_str(&code)
            .ok_or_else(|| self.err(format!("unknown fault code `{code}`")))?;
        let reason = self.text_content("Fault")?;
        if reason.is_empty() {
            return Err(self.err("fault reason must not be empty"));
        }
        Ok(Fault { code, reason })
    }
}
