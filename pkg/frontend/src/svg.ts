/**
 * Minimal SVG chart builder. No chart library, no randomness, no
 * timestamps: identical data in, identical bytes out.
 */

import type { BarSeries, LineSeries } from "./figures.js";

const WIDTH = 720;
const HEIGHT = 360;
const MARGIN = { top: 28, right: 16, bottom: 44, left: 60 };
const PALETTE = ["#4878a8", "#a85448", "#6a9455", "#8464a0", "#b0883e", "#50a0a8"];

const plotW = WIDTH - MARGIN.left - MARGIN.right;
const plotH = HEIGHT - MARGIN.top - MARGIN.bottom;

function fmt(v: number): string {
  // fixed-precision, trailing zeros trimmed, so output bytes are stable
  const s = v.toFixed(3);
  return s.replace(/\.?0+$/, "") || "0";
}

function esc(text: string): string {
  return text.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;");
}

function openSvg(title: string): string[] {
  return [
    `<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 ${WIDTH} ${HEIGHT}" font-family="sans-serif">`,
    `<title>${esc(title)}</title>`,
    `<rect width="${WIDTH}" height="${HEIGHT}" fill="#ffffff"/>`,
  ];
}

function yTicks(maxY: number): number[] {
  if (maxY <= 0) return [0];
  return [0, maxY / 4, maxY / 2, (3 * maxY) / 4, maxY];
}

function axes(parts: string[], maxY: number, xLabel: string, yLabel: string): void {
  const x0 = MARGIN.left;
  const y0 = MARGIN.top + plotH;
  parts.push(
    `<line x1="${x0}" y1="${MARGIN.top}" x2="${x0}" y2="${y0}" stroke="#444" stroke-width="1"/>`,
    `<line x1="${x0}" y1="${y0}" x2="${x0 + plotW}" y2="${y0}" stroke="#444" stroke-width="1"/>`,
  );
  for (const tick of yTicks(maxY)) {
    const y = maxY > 0 ? y0 - (tick / maxY) * plotH : y0;
    parts.push(
      `<text x="${x0 - 6}" y="${fmt(y + 3)}" text-anchor="end" font-size="9" fill="#444">${fmt(tick)}</text>`,
    );
  }
  parts.push(
    `<text x="${x0 + plotW / 2}" y="${HEIGHT - 8}" text-anchor="middle" font-size="10" fill="#222">${esc(xLabel)}</text>`,
    `<text x="14" y="${MARGIN.top + plotH / 2}" text-anchor="middle" font-size="10" fill="#222" transform="rotate(-90 14 ${MARGIN.top + plotH / 2})">${esc(yLabel)}</text>`,
  );
}

function legend(parts: string[], names: string[]): void {
  let x = MARGIN.left;
  names.forEach((name, i) => {
    const color = PALETTE[i % PALETTE.length];
    parts.push(
      `<rect x="${x}" y="10" width="9" height="9" fill="${color}"/>`,
      `<text x="${x + 13}" y="18" font-size="9" fill="#222">${esc(name)}</text>`,
    );
    x += 13 + 6 * name.length + 22;
  });
}

export function barChart(
  title: string,
  groups: string[],
  series: BarSeries[],
  yLabel: string,
): string {
  const maxY = Math.max(0, ...series.flatMap((s) => s.heights));
  const parts = openSvg(title);
  axes(parts, maxY, "", yLabel);
  legend(parts, series.map((s) => s.name));

  const groupW = plotW / Math.max(1, groups.length);
  const barW = (groupW * 0.8) / Math.max(1, series.length);
  groups.forEach((group, g) => {
    const gx = MARGIN.left + g * groupW + groupW * 0.1;
    series.forEach((s, i) => {
      const h = maxY > 0 ? (s.heights[g] / maxY) * plotH : 0;
      const x = gx + i * barW;
      const y = MARGIN.top + plotH - h;
      parts.push(
        `<rect x="${fmt(x)}" y="${fmt(y)}" width="${fmt(barW)}" height="${fmt(h)}" fill="${PALETTE[i % PALETTE.length]}"/>`,
      );
    });
    parts.push(
      `<text x="${fmt(gx + groupW * 0.4)}" y="${MARGIN.top + plotH + 14}" text-anchor="middle" font-size="9" fill="#222">${esc(group)}</text>`,
    );
  });
  parts.push("</svg>");
  return parts.join("\n") + "\n";
}

export function lineChart(
  title: string,
  series: LineSeries[],
  xLabel: string,
  yLabel: string,
): string {
  const xs = series.flatMap((s) => s.points.map((p) => p.x));
  const ys = series.flatMap((s) => s.points.map((p) => p.y));
  const minX = xs.length > 0 ? Math.min(...xs) : 0;
  const maxX = xs.length > 0 ? Math.max(...xs) : 1;
  const maxY = ys.length > 0 ? Math.max(0, ...ys) : 1;
  const spanX = maxX - minX || 1;

  const parts = openSvg(title);
  axes(parts, maxY, xLabel, yLabel);
  legend(parts, series.map((s) => s.name));

  series.forEach((s, i) => {
    if (s.points.length === 0) return;
    const coords = s.points
      .map((p) => {
        const x = MARGIN.left + ((p.x - minX) / spanX) * plotW;
        const y = MARGIN.top + plotH - (maxY > 0 ? (p.y / maxY) * plotH : 0);
        return `${fmt(x)},${fmt(y)}`;
      })
      .join(" ");
    const color = PALETTE[i % PALETTE.length];
    if (s.points.length === 1) {
      const [xy] = coords.split(" ");
      const [x, y] = xy.split(",");
      parts.push(`<circle cx="${x}" cy="${y}" r="2.5" fill="${color}"/>`);
    } else {
      parts.push(
        `<polyline points="${coords}" fill="none" stroke="${color}" stroke-width="1.3"/>`,
      );
    }
  });
  parts.push(
    `<text x="${MARGIN.left}" y="${MARGIN.top + plotH + 14}" font-size="9" fill="#222">${fmt(minX)}</text>`,
    `<text x="${MARGIN.left + plotW}" y="${MARGIN.top + plotH + 14}" text-anchor="end" font-size="9" fill="#222">${fmt(maxX)}</text>`,
    "</svg>",
  );
  return parts.join("\n") + "\n";
}
