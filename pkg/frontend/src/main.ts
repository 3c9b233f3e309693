import { App } from './app.js';

const mount = document.getElementById('app');
if (mount) {
  // ?api=... points the client at a server on another origin
  const params = new URLSearchParams(window.location.search);
  const endpoint = params.get('api') ?? window.location.origin;
  new App(mount, { endpoint });
}
