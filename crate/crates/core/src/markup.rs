//! Compilation of GUI trees to target markup, plus a small structural
//! checker for the emitted documents.

use std::str::FromStr;

use thiserror::Error;

use crate::dsl::{Element, GuiAst, Node};

/// Attribute value marking the container that holds the compiled GUI nodes.
pub const ROOT_ID: &str = "gui-root";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Target {
    Web,
    Android,
    Ios,
}

impl Target {
    pub const ALL: [Target; 3] = [Target::Web, Target::Android, Target::Ios];

    pub fn as_str(self) -> &'static str {
        match self {
            Target::Web => "web",
            Target::Android => "android",
            Target::Ios => "ios",
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            Target::Web => "html",
            Target::Android => "axml",
            Target::Ios => "storyboard.xml",
        }
    }

    /// Render theme name paired with this target.
    pub fn theme_name(self) -> &'static str {
        match self {
            Target::Web => "default",
            Target::Android => "android",
            Target::Ios => "ios",
        }
    }
}

impl FromStr for Target {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "web" | "html" => Ok(Target::Web),
            "android" | "android-like" => Ok(Target::Android),
            "ios" | "ios-like" => Ok(Target::Ios),
            other => Err(format!(
                "unknown target `{other}` (expected web, android or ios)"
            )),
        }
    }
}

struct Emitter {
    out: String,
    next_id: usize,
}

impl Emitter {
    fn line(&mut self, depth: usize, text: &str) {
        for _ in 0..depth {
            self.out.push_str("  ");
        }
        self.out.push_str(text);
        self.out.push('\n');
    }

    fn id(&mut self) -> usize {
        self.next_id += 1;
        self.next_id
    }
}

fn web_node(e: &mut Emitter, node: &Node, depth: usize) {
    let k = node.kind;
    match k {
        Element::Header => {
            e.line(depth, "<header class=\"header\">");
            web_children(e, node, depth + 1);
            e.line(depth, "</header>");
        }
        Element::Row => {
            e.line(depth, "<div class=\"row\">");
            web_children(e, node, depth + 1);
            e.line(depth, "</div>");
        }
        Element::Single | Element::Double | Element::Quadruple => {
            let span = 12 / k.column_count().unwrap_or(1);
            e.line(depth, &format!("<div class=\"col-{span}\">"));
            web_children(e, node, depth + 1);
            e.line(depth, "</div>");
        }
        Element::Text => e.line(depth, "<p class=\"text\">Lorem ipsum dolor sit amet</p>"),
        Element::SmallTitle => e.line(depth, "<h4 class=\"small-title\">Title</h4>"),
        _ => e.line(
            depth,
            &format!("<a class=\"btn {k}\" href=\"#\">Button</a>"),
        ),
    }
}

fn web_children(e: &mut Emitter, node: &Node, depth: usize) {
    for c in &node.children {
        web_node(e, c, depth);
    }
}

const WEB_STYLE: &str = ".header { display: flex; background: #dee2e6; } \
.row { display: flex; } .col-12 { flex: 0 0 100%; } .col-6 { flex: 0 0 50%; } \
.col-3 { flex: 0 0 25%; } .btn { border-radius: 4px; padding: 4px 8px; } \
.btn-active { background: #007bff; } .btn-inactive { background: #868e96; } \
.btn-green { background: #28a745; } .btn-orange { background: #fd7e14; } \
.btn-red { background: #dc3545; }";

fn compile_web(ast: &GuiAst) -> String {
    let mut e = Emitter {
        out: String::new(),
        next_id: 0,
    };
    e.line(0, "<!DOCTYPE html>");
    e.line(0, "<html>");
    e.line(1, "<head>");
    e.line(2, "<meta charset=\"utf-8\"/>");
    e.line(2, &format!("<style>{WEB_STYLE}</style>"));
    e.line(1, "</head>");
    e.line(1, "<body>");
    e.line(2, &format!("<main id=\"{ROOT_ID}\" class=\"container\">"));
    for n in &ast.children {
        web_node(&mut e, n, 3);
    }
    e.line(2, "</main>");
    e.line(1, "</body>");
    e.line(0, "</html>");
    e.out
}

fn android_node(e: &mut Emitter, node: &Node, depth: usize) {
    let k = node.kind;
    let id = e.id();
    match k {
        Element::Header | Element::Row => {
            e.line(
                depth,
                &format!(
                    "<LinearLayout android:id=\"@+id/{k}_{id}\" android:tag=\"{k}\" \
                     android:orientation=\"horizontal\" android:layout_width=\"match_parent\" \
                     android:layout_height=\"wrap_content\">"
                ),
            );
            android_children(e, node, depth + 1);
            e.line(depth, "</LinearLayout>");
        }
        Element::Single | Element::Double | Element::Quadruple => {
            let weight = 4 / k.column_count().unwrap_or(1);
            e.line(
                depth,
                &format!(
                    "<LinearLayout android:id=\"@+id/{k}_{id}\" android:tag=\"{k}\" \
                     android:orientation=\"vertical\" android:layout_width=\"0dp\" \
                     android:layout_weight=\"{weight}\" android:layout_height=\"wrap_content\">"
                ),
            );
            android_children(e, node, depth + 1);
            e.line(depth, "</LinearLayout>");
        }
        Element::Text => e.line(
            depth,
            &format!(
                "<TextView android:id=\"@+id/text_{id}\" android:tag=\"text\" \
                 android:text=\"Lorem ipsum dolor sit amet\"/>"
            ),
        ),
        Element::SmallTitle => e.line(
            depth,
            &format!(
                "<TextView android:id=\"@+id/title_{id}\" android:tag=\"small-title\" \
                 android:textStyle=\"bold\" android:text=\"Title\"/>"
            ),
        ),
        _ => e.line(
            depth,
            &format!(
                "<Button android:id=\"@+id/button_{id}\" android:tag=\"{k}\" \
                 android:text=\"Button\"/>"
            ),
        ),
    }
}

fn android_children(e: &mut Emitter, node: &Node, depth: usize) {
    for c in &node.children {
        android_node(e, c, depth);
    }
}

fn compile_android(ast: &GuiAst) -> String {
    let mut e = Emitter {
        out: String::new(),
        next_id: 0,
    };
    e.line(0, "<?xml version=\"1.0\" encoding=\"utf-8\"?>");
    e.line(
        0,
        &format!(
            "<LinearLayout xmlns:android=\"http://schemas.android.com/apk/res/android\" \
             android:id=\"@+id/{ROOT_ID}\" android:orientation=\"vertical\" \
             android:layout_width=\"match_parent\" android:layout_height=\"match_parent\">"
        ),
    );
    for n in &ast.children {
        android_node(&mut e, n, 1);
    }
    e.line(0, "</LinearLayout>");
    e.out
}

fn ios_node(e: &mut Emitter, node: &Node, depth: usize) {
    let k = node.kind;
    let id = e.id();
    match k {
        Element::Header | Element::Row => {
            e.line(
                depth,
                &format!(
                    "<stackView id=\"sv-{id}\" userLabel=\"{k}\" axis=\"horizontal\" \
                     distribution=\"fillEqually\">"
                ),
            );
            ios_children(e, node, depth + 1);
            e.line(depth, "</stackView>");
        }
        Element::Single | Element::Double | Element::Quadruple => {
            e.line(
                depth,
                &format!("<stackView id=\"sv-{id}\" userLabel=\"{k}\" axis=\"vertical\">"),
            );
            ios_children(e, node, depth + 1);
            e.line(depth, "</stackView>");
        }
        Element::Text => e.line(
            depth,
            &format!(
                "<label id=\"lb-{id}\" userLabel=\"text\" text=\"Lorem ipsum dolor sit amet\"/>"
            ),
        ),
        Element::SmallTitle => e.line(
            depth,
            &format!("<label id=\"lb-{id}\" userLabel=\"small-title\" text=\"Title\"/>"),
        ),
        _ => e.line(
            depth,
            &format!("<button id=\"bt-{id}\" userLabel=\"{k}\" title=\"Button\"/>"),
        ),
    }
}

fn ios_children(e: &mut Emitter, node: &Node, depth: usize) {
    for c in &node.children {
        ios_node(e, c, depth);
    }
}

fn compile_ios(ast: &GuiAst) -> String {
    let mut e = Emitter {
        out: String::new(),
        next_id: 0,
    };
    e.line(0, "<?xml version=\"1.0\" encoding=\"UTF-8\"?>");
    e.line(
        0,
        "<document type=\"com.apple.InterfaceBuilder3.CocoaTouch.Storyboard.XIB\" version=\"3.0\">",
    );
    e.line(1, "<scenes>");
    e.line(2, "<scene sceneID=\"scene-0\">");
    e.line(3, "<objects>");
    e.line(4, "<viewController id=\"vc-0\">");
    e.line(
        5,
        &format!("<stackView key=\"view\" id=\"{ROOT_ID}\" axis=\"vertical\">"),
    );
    for n in &ast.children {
        ios_node(&mut e, n, 6);
    }
    e.line(5, "</stackView>");
    e.line(4, "</viewController>");
    e.line(3, "</objects>");
    e.line(2, "</scene>");
    e.line(1, "</scenes>");
    e.line(0, "</document>");
    e.out
}

/// Emits the target document; one markup element per tree node, nested
/// inside a skeleton container tagged with [`ROOT_ID`].
pub fn compile(ast: &GuiAst, target: Target) -> String {
    match target {
        Target::Web => compile_web(ast),
        Target::Android => compile_android(ast),
        Target::Ios => compile_ios(ast),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MarkupError {
    #[error("unterminated tag at byte {0}")]
    Unterminated(usize),
    #[error("closing `{found}` does not match open `{expected}` at byte {position}")]
    Mismatched {
        expected: String,
        found: String,
        position: usize,
    },
    #[error("closing `{0}` with no open element")]
    StrayClose(String),
    #[error("{0} element(s) left open at end of document")]
    Unclosed(usize),
    #[error("no element carries the `{ROOT_ID}` marker")]
    MissingRoot,
}

/// Element tree recovered from a document.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MarkupElement {
    pub name: String,
    pub attributes: Vec<(String, String)>,
    pub children: Vec<MarkupElement>,
}

impl MarkupElement {
    pub fn attr(&self, name: &str) -> Option<&str> {
        self.attributes
            .iter()
            .find(|(k, _)| k == name)
            .map(|(_, v)| v.as_str())
    }

    pub fn descendant_count(&self) -> usize {
        self.children.iter().map(|c| 1 + c.descendant_count()).sum()
    }

    fn find(&self, pred: &dyn Fn(&MarkupElement) -> bool) -> Option<&MarkupElement> {
        if pred(self) {
            return Some(self);
        }
        self.children.iter().find_map(|c| c.find(pred))
    }

    fn is_root_marker(&self) -> bool {
        self.attributes
            .iter()
            .any(|(_, v)| v == ROOT_ID || v.strip_prefix("@+id/") == Some(ROOT_ID))
    }
}

fn parse_attributes(body: &str) -> Vec<(String, String)> {
    let mut attrs = Vec::new();
    let mut rest = body;
    while let Some(eq) = rest.find('=') {
        let name = rest[..eq].trim().to_string();
        let after = &rest[eq + 1..];
        let Some(q0) = after.find('"') else { break };
        let Some(q1) = after[q0 + 1..].find('"') else {
            break;
        };
        attrs.push((name, after[q0 + 1..q0 + 1 + q1].to_string()));
        rest = &after[q0 + 2 + q1..];
    }
    attrs
}

/// Parses tags into a tree, checking that every element is closed in order.
/// Declarations, processing instructions and comments are skipped.
pub fn parse_markup(text: &str) -> Result<MarkupElement, MarkupError> {
    let mut stack = vec![MarkupElement {
        name: "#document".into(),
        ..Default::default()
    }];
    let mut pos = 0;
    while let Some(off) = text[pos..].find('<') {
        let start = pos + off;
        if text[start..].starts_with("<!--") {
            let end = text[start..]
                .find("-->")
                .ok_or(MarkupError::Unterminated(start))?;
            pos = start + end + 3;
            continue;
        }
        let end = start
            + text[start..]
                .find('>')
                .ok_or(MarkupError::Unterminated(start))?;
        let inner = &text[start + 1..end];
        pos = end + 1;
        if inner.starts_with('!') || inner.starts_with('?') {
            continue;
        }
        if let Some(name) = inner.strip_prefix('/') {
            let name = name.trim();
            if stack.len() == 1 {
                return Err(MarkupError::StrayClose(name.to_string()));
            }
            let el = stack.pop().expect("non-empty");
            if el.name != name {
                return Err(MarkupError::Mismatched {
                    expected: el.name,
                    found: name.to_string(),
                    position: start,
                });
            }
            stack.last_mut().expect("document").children.push(el);
            continue;
        }
        let (body, self_closing) = match inner.strip_suffix('/') {
            Some(b) => (b, true),
            None => (inner, false),
        };
        let name_end = body.find(char::is_whitespace).unwrap_or(body.len());
        let el = MarkupElement {
            name: body[..name_end].to_string(),
            attributes: parse_attributes(&body[name_end..]),
            children: Vec::new(),
        };
        if self_closing {
            stack.last_mut().expect("document").children.push(el);
        } else {
            stack.push(el);
        }
    }
    if stack.len() != 1 {
        return Err(MarkupError::Unclosed(stack.len() - 1));
    }
    Ok(stack.pop().expect("document"))
}

/// Validates balance and returns the number of elements under the GUI root.
pub fn gui_node_count(text: &str) -> Result<usize, MarkupError> {
    let doc = parse_markup(text)?;
    let root = doc
        .find(&|e| e.is_root_marker())
        .ok_or(MarkupError::MissingRoot)?;
    Ok(root.descendant_count())
}

/// Counts open and close tags; self-closing tags count as both.
pub fn tag_balance(text: &str) -> (usize, usize) {
    let mut open = 0;
    let mut close = 0;
    let mut rest = text;
    while let Some(s) = rest.find('<') {
        let Some(e) = rest[s..].find('>') else { break };
        let inner = &rest[s + 1..s + e];
        if inner.starts_with('/') {
            close += 1;
        } else if !inner.starts_with('!') && !inner.starts_with('?') {
            open += 1;
            if inner.ends_with('/') {
                close += 1;
            }
        }
        rest = &rest[s + e + 1..];
    }
    (open, close)
}
