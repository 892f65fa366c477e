//! Event Reactor: validates feedback commands and wraps them for the wire.

use crate::events::{FeedbackCommand, InvalidCommand};
use crate::wire::Message;

/// Wraps one feedback command into the Feedback wire message bound for the
/// physical-side server, exactly one message per command. Out-of-bounds
/// magnitudes are rejected before anything is sent.
pub fn reactor_apply(cmd: &FeedbackCommand) -> Result<Message, InvalidCommand> {
    cmd.validate()?;
    Ok(Message::Feedback(cmd.clone()))
}
