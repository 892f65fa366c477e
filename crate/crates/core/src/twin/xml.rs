//! The normative twin XML schema, hand-written in both directions:
//!
//! ```xml
//! <twin id="veh-000001" type="E1">
//!   <state ts="10.000" x="10.00" y="0.00" speed_kmh="45.00"/>
//! </twin>
//! ```
//!
//! Per-type state attributes: `x y speed_kmh` (E1), `x y lane period_s`
//! (E2), `x y lane duration_rate` (E3), always preceded by `ts`. The
//! parser is strict: exact attribute sets, strictly increasing timestamps,
//! at least one state, finite numbers.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::{TwinEntry, TwinError, TwinInstance, TwinState};
use crate::events::EventType;

/// Emits the twin as XML in the normative schema. Requires at least one
/// history entry, and every entry must match the twin's type.
pub fn serialize_twin(twin: &TwinInstance) -> Result<String, TwinError> {
    if twin.history.is_empty() {
        return Err(TwinError::EmptyHistory { entity_id: twin.entity_id.clone() });
    }
    let mut out = String::new();
    let _ = writeln!(
        out,
        "<twin id=\"{}\" type=\"{}\">",
        escape(&twin.entity_id),
        twin.entity_type
    );
    for entry in &twin.history {
        let matches_type = matches!(
            (&entry.state, twin.entity_type),
            (TwinState::Vehicle { .. }, EventType::E1)
                | (TwinState::Sensor { .. }, EventType::E2)
                | (TwinState::TrafficLight { .. }, EventType::E3)
        );
        if !matches_type {
            return Err(TwinError::SchemaViolation {
                line: 0,
                element: "state".into(),
                detail: format!(
                    "state kind does not match twin type {} of {}",
                    twin.entity_type, twin.entity_id
                ),
            });
        }
        match &entry.state {
            TwinState::Vehicle { x, y, speed_kmh } => {
                let _ = writeln!(
                    out,
                    "  <state ts=\"{:.3}\" x=\"{:.2}\" y=\"{:.2}\" speed_kmh=\"{:.2}\"/>",
                    entry.ts, x, y, speed_kmh
                );
            }
            TwinState::Sensor { x, y, lane, period_s } => {
                let _ = writeln!(
                    out,
                    "  <state ts=\"{:.3}\" x=\"{:.2}\" y=\"{:.2}\" lane=\"{}\" period_s=\"{:.2}\"/>",
                    entry.ts,
                    x,
                    y,
                    escape(lane),
                    period_s
                );
            }
            TwinState::TrafficLight { x, y, lane, duration_rate } => {
                let _ = writeln!(
                    out,
                    "  <state ts=\"{:.3}\" x=\"{:.2}\" y=\"{:.2}\" lane=\"{}\" duration_rate=\"{:.4}\"/>",
                    entry.ts,
                    x,
                    y,
                    escape(lane),
                    duration_rate
                );
            }
        }
    }
    out.push_str("</twin>\n");
    Ok(out)
}

/// Parses a document produced by [`serialize_twin`] (an optional XML
/// declaration is tolerated). Violations carry the line and element.
pub fn parse_twin(xml: &str) -> Result<TwinInstance, TwinError> {
    let mut sc = Scanner { bytes: xml.as_bytes(), pos: 0, line: 1 };
    sc.skip_ws();
    if sc.eat("<?") {
        sc.consume_until("?>", "declaration")?;
        sc.skip_ws();
    }
    if !sc.eat("<twin") {
        return Err(sc.violation("twin", "expected <twin> root element"));
    }
    let (mut attrs, self_closed) = parse_attrs(&mut sc, "twin")?;
    let entity_id = attrs
        .remove("id")
        .ok_or_else(|| sc.violation("twin", "missing entity_id attribute 'id'"))?;
    let entity_type = match attrs.remove("type").as_deref() {
        Some("E1") => EventType::E1,
        Some("E2") => EventType::E2,
        Some("E3") => EventType::E3,
        Some(other) => {
            return Err(sc.violation("twin", format!("type must be E1, E2 or E3, got {other:?}")))
        }
        None => return Err(sc.violation("twin", "missing 'type' attribute")),
    };
    if let Some(extra) = attrs.keys().next() {
        return Err(sc.violation("twin", format!("unexpected attribute {extra:?}")));
    }
    if self_closed {
        return Err(sc.violation("twin", "history must contain at least one <state>"));
    }

    let mut history = std::collections::VecDeque::new();
    let mut last_ts = f64::NEG_INFINITY;
    loop {
        sc.skip_ws();
        if sc.eat("</twin") {
            sc.skip_ws();
            if !sc.eat(">") {
                return Err(sc.violation("twin", "malformed closing tag"));
            }
            break;
        }
        if !sc.eat("<state") {
            return Err(sc.violation("twin", "expected <state/> or </twin>"));
        }
        let line = sc.line;
        let (mut attrs, self_closed) = parse_attrs(&mut sc, "state")?;
        if !self_closed {
            return Err(sc.violation("state", "state elements must be self-closing"));
        }
        let ts = take_f64(&mut attrs, "ts", line)?;
        if ts <= last_ts {
            return Err(TwinError::SchemaViolation {
                line,
                element: "state".into(),
                detail: format!("timestamps must increase strictly: {ts} after {last_ts}"),
            });
        }
        last_ts = ts;
        let x = take_f64(&mut attrs, "x", line)?;
        let y = take_f64(&mut attrs, "y", line)?;
        let state = match entity_type {
            EventType::E1 => {
                TwinState::Vehicle { x, y, speed_kmh: take_f64(&mut attrs, "speed_kmh", line)? }
            }
            EventType::E2 => TwinState::Sensor {
                x,
                y,
                lane: take_string(&mut attrs, "lane", line)?,
                period_s: take_f64(&mut attrs, "period_s", line)?,
            },
            EventType::E3 => TwinState::TrafficLight {
                x,
                y,
                lane: take_string(&mut attrs, "lane", line)?,
                duration_rate: take_f64(&mut attrs, "duration_rate", line)?,
            },
        };
        if let Some(extra) = attrs.keys().next() {
            return Err(TwinError::SchemaViolation {
                line,
                element: "state".into(),
                detail: format!("unexpected attribute {extra:?}"),
            });
        }
        history.push_back(TwinEntry { ts, state });
    }
    sc.skip_ws();
    if sc.pos != sc.bytes.len() {
        return Err(sc.violation("twin", "trailing content after </twin>"));
    }
    if history.is_empty() {
        return Err(sc.violation("twin", "history must contain at least one <state>"));
    }
    Ok(TwinInstance { entity_id, entity_type, history })
}

fn escape(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    for c in raw.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            other => out.push(other),
        }
    }
    out
}

fn take_string(
    attrs: &mut BTreeMap<String, String>,
    key: &str,
    line: usize,
) -> Result<String, TwinError> {
    attrs.remove(key).ok_or_else(|| TwinError::SchemaViolation {
        line,
        element: "state".into(),
        detail: format!("missing attribute {key:?}"),
    })
}

fn take_f64(
    attrs: &mut BTreeMap<String, String>,
    key: &str,
    line: usize,
) -> Result<f64, TwinError> {
    let raw = take_string(attrs, key, line)?;
    let violation = |detail: String| TwinError::SchemaViolation {
        line,
        element: "state".into(),
        detail,
    };
    let value: f64 = raw
        .trim()
        .parse()
        .map_err(|_| violation(format!("attribute {key:?} is not a number: {raw:?}")))?;
    if !value.is_finite() {
        return Err(violation(format!("attribute {key:?} must be finite, got {raw:?}")));
    }
    Ok(value)
}

struct Scanner<'a> {
    bytes: &'a [u8],
    pos: usize,
    line: usize,
}

impl Scanner<'_> {
    fn violation(&self, element: &str, detail: impl Into<String>) -> TwinError {
        TwinError::SchemaViolation { line: self.line, element: element.into(), detail: detail.into() }
    }

    fn skip_ws(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if !b.is_ascii_whitespace() {
                break;
            }
            if b == b'\n' {
                self.line += 1;
            }
            self.pos += 1;
        }
    }

    fn eat(&mut self, lit: &str) -> bool {
        if self.bytes[self.pos..].starts_with(lit.as_bytes()) {
            self.pos += lit.len();
            true
        } else {
            false
        }
    }

    fn consume_until(&mut self, lit: &str, element: &str) -> Result<(), TwinError> {
        while self.pos < self.bytes.len() {
            if self.eat(lit) {
                return Ok(());
            }
            if self.bytes[self.pos] == b'\n' {
                self.line += 1;
            }
            self.pos += 1;
        }
        Err(self.violation(element, format!("unterminated section, expected {lit:?}")))
    }

    fn attr_name(&mut self) -> Option<String> {
        let start = self.pos;
        while let Some(&b) = self.bytes.get(self.pos) {
            if b.is_ascii_alphanumeric() || b == b'_' {
                self.pos += 1;
            } else {
                break;
            }
        }
        if self.pos == start {
            return None;
        }
        Some(String::from_utf8_lossy(&self.bytes[start..self.pos]).into_owned())
    }

    fn quoted_value(&mut self, element: &str) -> Result<String, TwinError> {
        if !self.eat("\"") {
            return Err(self.violation(element, "attribute value must be double-quoted"));
        }
        let mut out = String::new();
        loop {
            match self.bytes.get(self.pos) {
                None => return Err(self.violation(element, "unterminated attribute value")),
                Some(b'"') => {
                    self.pos += 1;
                    return Ok(out);
                }
                Some(b'<') => {
                    return Err(self.violation(element, "unescaped '<' in attribute value"))
                }
                Some(b'&') => {
                    self.pos += 1;
                    let end = self.bytes[self.pos..]
                        .iter()
                        .take(6)
                        .position(|&b| b == b';')
                        .ok_or_else(|| self.violation(element, "malformed entity reference"))?;
                    let name = &self.bytes[self.pos..self.pos + end];
                    out.push(match name {
                        b"amp" => '&',
                        b"lt" => '<',
                        b"gt" => '>',
                        b"quot" => '"',
                        b"apos" => '\'',
                        other => {
                            let other = String::from_utf8_lossy(other);
                            return Err(self
                                .violation(element, format!("unknown entity &{other};")));
                        }
                    });
                    self.pos += end + 1;
                }
                Some(&b) => {
                    if b == b'\n' {
                        self.line += 1;
                    }
                    // Multi-byte UTF-8 sequences pass through verbatim.
                    let s = &self.bytes[self.pos..];
                    let ch_len = utf8_len(b);
                    let ch = std::str::from_utf8(&s[..ch_len.min(s.len())])
                        .map_err(|_| self.violation(element, "invalid UTF-8"))?;
                    out.push_str(ch);
                    self.pos += ch.len();
                }
            }
        }
    }
}

fn utf8_len(first: u8) -> usize {
    match first {
        b if b < 0x80 => 1,
        b if b >> 5 == 0b110 => 2,
        b if b >> 4 == 0b1110 => 3,
        _ => 4,
    }
}

fn parse_attrs(
    sc: &mut Scanner,
    element: &str,
) -> Result<(BTreeMap<String, String>, bool), TwinError> {
    let mut attrs = BTreeMap::new();
    loop {
        sc.skip_ws();
        if sc.eat("/>") {
            return Ok((attrs, true));
        }
        if sc.eat(">") {
            return Ok((attrs, false));
        }
        let name = sc
            .attr_name()
            .ok_or_else(|| sc.violation(element, "expected attribute name or '>'"))?;
        sc.skip_ws();
        if !sc.eat("=") {
            return Err(sc.violation(element, format!("attribute {name:?} is missing '='")));
        }
        sc.skip_ws();
        let value = sc.quoted_value(element)?;
        if attrs.insert(name.clone(), value).is_some() {
            return Err(sc.violation(element, format!("duplicate attribute {name:?}")));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::{q2, q3, q4};
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::VecDeque;

    fn vehicle_twin() -> TwinInstance {
        TwinInstance {
            entity_id: "veh-000001".into(),
            entity_type: EventType::E1,
            history: VecDeque::from(vec![TwinEntry {
                ts: 10.0,
                state: TwinState::Vehicle { x: 10.0, y: 0.0, speed_kmh: 45.0 },
            }]),
        }
    }

    #[test]
    fn serializes_the_normative_schema_exactly() {
        let xml = serialize_twin(&vehicle_twin()).unwrap();
        assert_eq!(
            xml,
            "<twin id=\"veh-000001\" type=\"E1\">\n  <state ts=\"10.000\" x=\"10.00\" y=\"0.00\" speed_kmh=\"45.00\"/>\n</twin>\n"
        );
    }

    #[test]
    fn parses_its_own_output() {
        let twin = vehicle_twin();
        assert_eq!(parse_twin(&serialize_twin(&twin).unwrap()).unwrap(), twin);
    }

    #[test]
    fn tolerates_an_xml_declaration() {
        let xml = format!(
            "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n{}",
            serialize_twin(&vehicle_twin()).unwrap()
        );
        assert_eq!(parse_twin(&xml).unwrap(), vehicle_twin());
    }

    #[test]
    fn roundtrips_ten_thousand_random_twins() {
        let mut rng = ChaCha8Rng::seed_from_u64(404);
        let lanes = ["e-0-0", "s-2-1", "a&b<c>\"d'", "läne-θ"];
        for case in 0..10_000 {
            let entity_type = EventType::ALL[rng.random_range(0..3)];
            let entity_id = match rng.random_range(0..3) {
                0 => format!("veh-{case:06}"),
                1 => format!("id&<>'\"-{case}"),
                _ => format!("π-{case}"),
            };
            let mut ts = q3(rng.random_range(0.0..100.0));
            let mut history = VecDeque::new();
            for _ in 0..rng.random_range(1..=8) {
                let x = q2(rng.random_range(-1000.0..1000.0));
                let y = q2(rng.random_range(-1000.0..1000.0));
                let lane = lanes[rng.random_range(0..lanes.len())].to_string();
                let state = match entity_type {
                    EventType::E1 => TwinState::Vehicle {
                        x,
                        y,
                        speed_kmh: q2(rng.random_range(0.0..200.0)),
                    },
                    EventType::E2 => TwinState::Sensor {
                        x,
                        y,
                        lane,
                        period_s: q2(rng.random_range(0.01..100.0)),
                    },
                    EventType::E3 => TwinState::TrafficLight {
                        x,
                        y,
                        lane,
                        duration_rate: q4(rng.random_range(0.0..1.0)),
                    },
                };
                history.push_back(TwinEntry { ts, state });
                ts = q3(ts + 0.001 + rng.random_range(0.0..5.0));
            }
            let twin = TwinInstance { entity_id, entity_type, history };
            let xml = serialize_twin(&twin).unwrap();
            assert_eq!(parse_twin(&xml).unwrap(), twin, "case {case}:\n{xml}");
        }
    }

    #[test]
    fn empty_history_cannot_serialize() {
        let twin = TwinInstance {
            entity_id: "veh-000001".into(),
            entity_type: EventType::E1,
            history: VecDeque::new(),
        };
        assert!(matches!(
            serialize_twin(&twin).unwrap_err(),
            TwinError::EmptyHistory { .. }
        ));
    }

    #[test]
    fn mixed_state_kind_is_rejected_by_the_serializer() {
        let mut twin = vehicle_twin();
        twin.history.push_back(TwinEntry {
            ts: 20.0,
            state: TwinState::Sensor { x: 0.0, y: 0.0, lane: "e-0-0".into(), period_s: 15.0 },
        });
        assert!(serialize_twin(&twin).is_err());
    }

    #[test]
    fn missing_id_is_a_schema_violation() {
        let xml = "<twin type=\"E1\">\n  <state ts=\"1.000\" x=\"0.00\" y=\"0.00\" speed_kmh=\"1.00\"/>\n</twin>\n";
        match parse_twin(xml).unwrap_err() {
            TwinError::SchemaViolation { element, detail, .. } => {
                assert_eq!(element, "twin");
                assert!(detail.contains("id"), "{detail}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn non_monotone_timestamps_are_rejected_with_the_line() {
        let xml = "<twin id=\"v\" type=\"E1\">\n  <state ts=\"2.000\" x=\"0.00\" y=\"0.00\" speed_kmh=\"1.00\"/>\n  <state ts=\"2.000\" x=\"0.00\" y=\"0.00\" speed_kmh=\"1.00\"/>\n</twin>\n";
        match parse_twin(xml).unwrap_err() {
            TwinError::SchemaViolation { line, element, detail } => {
                assert_eq!(line, 3);
                assert_eq!(element, "state");
                assert!(detail.contains("strictly"), "{detail}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn wrong_attribute_set_for_the_type_is_rejected() {
        // lane does not belong on an E1 state
        let xml = "<twin id=\"v\" type=\"E1\">\n  <state ts=\"1.000\" x=\"0.00\" y=\"0.00\" speed_kmh=\"1.00\" lane=\"e-0-0\"/>\n</twin>\n";
        assert!(matches!(parse_twin(xml), Err(TwinError::SchemaViolation { .. })));
        // missing speed_kmh
        let xml = "<twin id=\"v\" type=\"E1\">\n  <state ts=\"1.000\" x=\"0.00\" y=\"0.00\"/>\n</twin>\n";
        match parse_twin(xml).unwrap_err() {
            TwinError::SchemaViolation { detail, .. } => {
                assert!(detail.contains("speed_kmh"), "{detail}")
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn garbage_numbers_and_trailing_content_are_rejected() {
        let xml = "<twin id=\"v\" type=\"E1\">\n  <state ts=\"abc\" x=\"0.00\" y=\"0.00\" speed_kmh=\"1.00\"/>\n</twin>\n";
        assert!(matches!(parse_twin(xml), Err(TwinError::SchemaViolation { .. })));
        let xml = "<twin id=\"v\" type=\"E1\">\n  <state ts=\"nan\" x=\"0.00\" y=\"0.00\" speed_kmh=\"1.00\"/>\n</twin>\n";
        assert!(matches!(parse_twin(xml), Err(TwinError::SchemaViolation { .. })));
        let xml = format!("{}<oops/>", serialize_twin(&vehicle_twin()).unwrap());
        assert!(matches!(parse_twin(&xml), Err(TwinError::SchemaViolation { .. })));
    }

    #[test]
    fn twin_without_states_is_rejected() {
        for xml in ["<twin id=\"v\" type=\"E1\"></twin>", "<twin id=\"v\" type=\"E1\"/>"] {
            match parse_twin(xml).unwrap_err() {
                TwinError::SchemaViolation { detail, .. } => {
                    assert!(detail.contains("at least one"), "{detail}")
                }
                other => panic!("{other:?}"),
            }
        }
    }
}
