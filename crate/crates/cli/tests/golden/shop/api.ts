// Client stub for shop.example.com. Generated from endpoint templates.

const BASE = "https://shop.example.com";

/** GET /api/products/{id} returns an object with id, in_stock, name, price, tags. */
export async function getApiProductsId(id: string): Promise<{ id: number; in_stock: boolean; name: string; price: number; tags?: Array<string> }> {
  const res = await fetch(`${BASE}/api/products/${id}`, { method: "GET" });
  return res.json();
}

/** GET /api/search returns an object with results, total. */
export async function getApiSearch(query: Record<string, string> = {}): Promise<{ results: Array<{ id: number; name: string; price: number }>; total: number }> {
  const res = await fetch(`${BASE}/api/search?${new URLSearchParams(query)}`, { method: "GET" });
  return res.json();
}

/** POST /api/cart returns an object with cart_id, items, subtotal. */
export async function postApiCart(): Promise<{ cart_id: string; items: Array<{ product_id: number; qty: number }>; subtotal: number }> {
  const res = await fetch(`${BASE}/api/cart`, { method: "POST" });
  return res.json();
}

