//! Live whole-body session streamed over WebSocket.
//!
//! One task owns the simulation and advances it in real time, publishing an
//! immutable [`StateFrame`] after every frame period. Each connection reads
//! the latest frame and forwards its commands to the simulation task, which
//! applies them at the start of the next frame.

use std::time::Duration;

use anyhow::Result;
use compliant_core::experiments::WholeBodySession;
use futures_util::{SinkExt, StreamExt};
use log::{info, warn};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{mpsc, watch};
use tokio::time::MissedTickBehavior;
use tokio_tungstenite::tungstenite::Message;

use crate::protocol::{Command, StateFrame};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServeOptions {
    /// Frames per second sent to clients.
    pub frame_rate: f64,
    /// Simulation step, s.
    pub dt: f64,
}

impl Default for ServeOptions {
    fn default() -> Self {
        Self { frame_rate: 30.0, dt: 1e-3 }
    }
}

/// Accept clients on `listener` until the simulation fails.
pub async fn serve(listener: TcpListener, session: WholeBodySession, options: ServeOptions) -> Result<()> {
    let (frames_tx, frames_rx) = watch::channel(StateFrame::capture(&session));
    let (commands_tx, commands_rx) = mpsc::unbounded_channel();
    let mut sim = tokio::spawn(simulate(session, options, commands_rx, frames_tx));
    loop {
        tokio::select! {
            accepted = listener.accept() => {
                let (stream, peer) = accepted?;
                info!("client {peer} connected");
                let (frames, commands) = (frames_rx.clone(), commands_tx.clone());
                tokio::spawn(async move {
                    if let Err(e) = connection(stream, frames, commands).await {
                        warn!("client {peer}: {e}");
                    }
                    info!("client {peer} disconnected");
                });
            }
            done = &mut sim => return done?,
        }
    }
}

async fn simulate(
    mut session: WholeBodySession,
    options: ServeOptions,
    mut commands: mpsc::UnboundedReceiver<Command>,
    frames: watch::Sender<StateFrame>,
) -> Result<()> {
    let period = 1.0 / options.frame_rate;
    let steps = (period / options.dt).round().max(1.0) as usize;
    let mut tick = tokio::time::interval(Duration::from_secs_f64(period));
    tick.set_missed_tick_behavior(MissedTickBehavior::Skip);
    loop {
        tick.tick().await;
        while let Ok(cmd) = commands.try_recv() {
            cmd.apply(&mut session);
        }
        for _ in 0..steps {
            session.step(options.dt)?;
        }
        frames.send_replace(StateFrame::capture(&session));
    }
}

async fn connection(stream: TcpStream, mut frames: watch::Receiver<StateFrame>, commands: mpsc::UnboundedSender<Command>) -> Result<()> {
    let ws = tokio_tungstenite::accept_async(stream).await?;
    let (mut tx, mut rx) = ws.split();
    loop {
        tokio::select! {
            changed = frames.changed() => {
                if changed.is_err() {
                    break;
                }
                let text = serde_json::to_string(&*frames.borrow_and_update())?;
                tx.send(Message::text(text)).await?;
            }
            msg = rx.next() => match msg {
                Some(Ok(Message::Text(text))) => match Command::parse(&text) {
                    Ok(cmd) => {
                        let _ = commands.send(cmd);
                    }
                    Err(e) => tx.send(Message::text(serde_json::json!({ "error": e.to_string() }).to_string())).await?,
                },
                Some(Ok(Message::Close(_))) | None => break,
                Some(Ok(_)) => {}
                Some(Err(e)) => return Err(e.into()),
            },
        }
    }
    Ok(())
}
