const KEYWORDS = new Set([
  'select', 'from', 'where', 'into', 'top', 'and', 'or', 'not', 'order',
  'by', 'group', 'having', 'join', 'inner', 'left', 'right', 'outer',
  'cross', 'on', 'as', 'distinct', 'union', 'all', 'between', 'like',
  'in', 'is', 'null', 'case', 'when', 'then', 'else', 'end', 'limit',
  'count', 'sum', 'avg', 'min', 'max', 'insert', 'values', 'update',
  'set', 'delete', 'create', 'table', 'drop', 'asc', 'desc',
]);

function escapeHtml(text: string): string {
  return text
    .replace(/&/g, '&amp;')
    .replace(/</g, '&lt;')
    .replace(/>/g, '&gt;');
}

/**
 * Render SQL as HTML with keyword/string/number/comment spans, for the
 * display layer behind the editor textarea. Purely cosmetic: nothing is
 * validated here, the server screens every submission.
 */
export function highlightSql(sql: string): string {
  let out = '';
  let i = 0;
  const n = sql.length;
  while (i < n) {
    const ch = sql[i];
    if (ch === "'" || ch === '"') {
      // string literal; doubled quotes stay inside it
      let j = i + 1;
      while (j < n) {
        if (sql[j] === ch) {
          if (sql[j + 1] === ch) j += 2;
          else {
            j += 1;
            break;
          }
        } else j += 1;
      }
      out += `<span class="sql-str">${escapeHtml(sql.slice(i, j))}</span>`;
      i = j;
    } else if (ch === '-' && sql[i + 1] === '-') {
      let j = sql.indexOf('\n', i);
      if (j === -1) j = n;
      out += `<span class="sql-cmt">${escapeHtml(sql.slice(i, j))}</span>`;
      i = j;
    } else if (ch === '/' && sql[i + 1] === '*') {
      let j = sql.indexOf('*/', i + 2);
      j = j === -1 ? n : j + 2;
      out += `<span class="sql-cmt">${escapeHtml(sql.slice(i, j))}</span>`;
      i = j;
    } else if (/[A-Za-z_]/.test(ch)) {
      let j = i + 1;
      while (j < n && /[A-Za-z0-9_]/.test(sql[j])) j += 1;
      const word = sql.slice(i, j);
      out += KEYWORDS.has(word.toLowerCase())
        ? `<span class="sql-kw">${escapeHtml(word)}</span>`
        : escapeHtml(word);
      i = j;
    } else if (/[0-9]/.test(ch)) {
      let j = i + 1;
      while (j < n && /[0-9.]/.test(sql[j])) j += 1;
      out += `<span class="sql-num">${escapeHtml(sql.slice(i, j))}</span>`;
      i = j;
    } else {
      out += escapeHtml(ch);
      i += 1;
    }
  }
  return out;
}
