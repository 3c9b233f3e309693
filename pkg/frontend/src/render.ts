type Attrs = Record<string, string | boolean | ((event: Event) => void)>;
type Child = Node | string;

/** Build an element with attributes, event handlers, and children. */
export function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Attrs = {},
  ...children: Child[]
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) {
    if (typeof value === 'function') {
      node.addEventListener(key.replace(/^on/, ''), value);
    } else if (typeof value === 'boolean') {
      if (value) node.setAttribute(key, '');
    } else {
      node.setAttribute(key, value);
    }
  }
  for (const child of children) {
    node.append(child instanceof Node ? child : document.createTextNode(child));
  }
  return node;
}

export function clear(node: HTMLElement): void {
  while (node.firstChild) node.removeChild(node.firstChild);
}

export function fmtTime(ms: number | null): string {
  if (ms === null) return '-';
  const d = new Date(ms);
  const pad = (x: number) => String(x).padStart(2, '0');
  return (
    `${d.getFullYear()}-${pad(d.getMonth() + 1)}-${pad(d.getDate())} ` +
    `${pad(d.getHours())}:${pad(d.getMinutes())}:${pad(d.getSeconds())}`
  );
}

export function fmtDuration(from: number | null, to: number | null): string {
  if (from === null) return '-';
  const end = to === null ? Date.now() : to;
  let s = Math.max(0, Math.floor((end - from) / 1000));
  if (s < 60) return `${s}s`;
  if (s < 3600) return `${Math.floor(s / 60)}m ${s % 60}s`;
  const h = Math.floor(s / 3600);
  s = s % 3600;
  return `${h}h ${Math.floor(s / 60)}m`;
}

export function stateBadge(state: string): HTMLElement {
  return el('span', { class: `badge badge-${state.toLowerCase()}` }, state);
}
