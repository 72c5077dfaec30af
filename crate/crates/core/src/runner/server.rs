use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::Arc;

use super::wire::*;
use crate::error::{NavError, Result};
use crate::maze::{Action, MazeLayout, Observation, World, WorldConfig, NUM_ACTIONS};
use crate::targets::DepthTarget;

#[derive(Clone, Debug)]
pub struct ServerConfig {
    pub layout: Arc<MazeLayout>,
    pub world: WorldConfig,
    /// Send per-pixel depth instead of the 4x16 grid.
    pub raw_depth: bool,
}

pub fn obs_message(obs: &Observation, reward: f32, done: bool, far: f32, raw_depth: bool) -> Result<ObsMessage> {
    let depth = if raw_depth {
        obs.depth_raw.clone()
    } else {
        DepthTarget::from_raw(&obs.depth_raw, obs.height, obs.width, far)?.values.iter().map(|&v| v as f32).collect()
    };
    let dim = |v: usize| u16::try_from(v).map_err(|_| NavError::Config(format!("image side {v} does not fit the wire format")));
    Ok(ObsMessage {
        width: dim(obs.width)?,
        height: dim(obs.height)?,
        rgb: obs.rgb.clone(),
        depth,
        velocity: obs.velocity,
        prev_action: obs.prev_action.unwrap_or(NO_ACTION),
        prev_reward: obs.prev_reward,
        reward,
        done,
    })
}

/// Serves one environment per connection, each on its own thread.
pub struct EnvServer {
    listener: TcpListener,
    cfg: Arc<ServerConfig>,
}

impl EnvServer {
    pub fn bind<A: ToSocketAddrs>(addr: A, cfg: ServerConfig) -> Result<Self> {
        Ok(Self { listener: TcpListener::bind(addr)?, cfg: Arc::new(cfg) })
    }

    pub fn local_addr(&self) -> Result<SocketAddr> {
        Ok(self.listener.local_addr()?)
    }

    pub fn serve(self) -> Result<()> {
        for stream in self.listener.incoming() {
            let stream = match stream {
                Ok(s) => s,
                Err(e) => {
                    log::warn!("accept failed: {e}");
                    continue;
                }
            };
            let cfg = Arc::clone(&self.cfg);
            std::thread::spawn(move || {
                let peer = stream.peer_addr().map(|a| a.to_string()).unwrap_or_default();
                match session(stream, &cfg) {
                    Ok(()) => log::debug!("session {peer} closed"),
                    Err(e) => log::info!("session {peer} ended: {e}"),
                }
            });
        }
        Ok(())
    }
}

fn refuse(stream: &mut TcpStream, code: u16, message: String) -> Result<()> {
    write_message(stream, &Message::Err { code, message: message.clone() })?;
    Err(NavError::Usage(format!("error {code}: {message}")))
}

fn session(mut stream: TcpStream, cfg: &ServerConfig) -> Result<()> {
    stream.set_nodelay(true)?;
    let far = cfg.world.render.max_range;
    let mut world = World::new(Arc::clone(&cfg.layout), cfg.world);
    let mut started = false;
    loop {
        let body = match read_frame(&mut stream, MAX_REQUEST_LEN) {
            Ok(Some(b)) => b,
            Ok(None) => return Ok(()),
            Err(NavError::Io(e)) => return Err(NavError::Io(e)),
            Err(e) => return refuse(&mut stream, ERR_MALFORMED, e.to_string()),
        };
        let reply = match Message::decode(&body) {
            Ok(Message::Reset { episode_seed }) => {
                let obs = world.reset(episode_seed);
                started = true;
                obs_message(&obs, 0.0, false, far, cfg.raw_depth)
            }
            Ok(Message::Step { action }) => {
                if !started {
                    return refuse(&mut stream, ERR_NOT_RESET, "STEP before RESET".into());
                }
                if action as usize >= NUM_ACTIONS {
                    return refuse(&mut stream, ERR_BAD_ACTION, format!("action {action} is not below {NUM_ACTIONS}"));
                }
                if world.done() {
                    return refuse(&mut stream, ERR_EPISODE_DONE, "episode finished; send RESET".into());
                }
                world
                    .step(Action::new(action)?)
                    .and_then(|r| obs_message(&r.obs, r.reward, r.done, far, cfg.raw_depth))
            }
            Ok(other) => return refuse(&mut stream, ERR_MALFORMED, format!("clients may not send {other:?}")),
            Err(e) => return refuse(&mut stream, ERR_MALFORMED, e.to_string()),
        };
        match reply {
            Ok(o) => write_message(&mut stream, &Message::Obs(o))?,
            Err(e) => return refuse(&mut stream, ERR_INTERNAL, e.to_string()),
        }
    }
}
