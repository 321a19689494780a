//! Model-provider boundary: prompt templates, reply schemas, the retrying
//! gateway, a scripted mock and an HTTP client.

pub mod gateway;
pub mod http;
pub mod mock;
pub mod schema;
pub mod templates;

pub use gateway::{
    ChatProvider, ChatRequest, ChatResponse, Gateway, GatewayError, GatewayStats, ProviderConfig, ProviderError,
    ProviderRole, Structured,
};
pub use mock::{MockProvider, Unmatched};
pub use templates::{render_prompt, render_with, static_strategy, PromptOptions, TemplateError, TemplateId};
